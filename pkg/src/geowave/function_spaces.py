"""Lattice function spaces.

Vector-valued samples on a uniform 1-d lattice, local Sobolev norms with
fractional end cells, light cones, Hestenes reflection extensions and the two
interpolation inequalities used by the well-posedness arguments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .errors import HorizonExceeded, IntervalOutsideGrid, UnsupportedOrder

__all__ = [
    "GridFunction",
    "State",
    "LightCone",
    "InterpolationReport",
    "sobolev_norm",
    "light_cone_norm",
    "state_norm",
    "extend",
    "interpolation_check",
    "derivative1",
    "derivative2",
]

_ALIGN_TOL = 1e-9


@dataclass(frozen=True)
class GridFunction:
    """Samples of an R^n-valued function on a uniform lattice.

    values has shape (npoints, ncomp); the sample at index i sits at
    origin + i*spacing.
    """

    origin: float
    spacing: float
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2 or vals.shape[0] < 4:
            raise ValueError("values must be (npoints >= 4, ncomp)")
        object.__setattr__(self, "values", vals)
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")

    # -- basic queries ------------------------------------------------------

    @property
    def npoints(self) -> int:
        return self.values.shape[0]

    @property
    def ncomp(self) -> int:
        return self.values.shape[1]

    @property
    def x(self) -> np.ndarray:
        return self.origin + self.spacing * np.arange(self.npoints)

    @property
    def right(self) -> float:
        return self.origin + self.spacing * (self.npoints - 1)

    def validate(self) -> None:
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function contains non-finite samples")

    def same_lattice(self, other: "GridFunction") -> bool:
        return (
            self.npoints == other.npoints
            and abs(self.origin - other.origin) <= _ALIGN_TOL * self.spacing
            and abs(self.spacing - other.spacing) <= _ALIGN_TOL * self.spacing
        )

    def with_values(self, values: np.ndarray) -> "GridFunction":
        return GridFunction(self.origin, self.spacing, values)

    @classmethod
    def from_callable(
        cls, fn: Callable[[np.ndarray], np.ndarray], origin: float, spacing: float, npoints: int
    ) -> "GridFunction":
        x = origin + spacing * np.arange(npoints)
        vals = np.asarray(fn(x), dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] != npoints:  # callable returned (ncomp, m)
            vals = vals.T
        return cls(origin, spacing, vals)

    # -- arithmetic (new objects, shared lattice assumed) --------------------

    def __add__(self, other: "GridFunction") -> "GridFunction":
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        return self.with_values(self.values - other.values)

    def __mul__(self, c: float) -> "GridFunction":
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    # -- serialization --------------------------------------------------------

    def save_csv(self, path) -> None:
        with open(path, "w") as fh:
            cols = ", ".join(f"f_{i+1}" for i in range(self.ncomp))
            fh.write(f"# x, {cols}\n")
            for xi, row in zip(self.x, self.values):
                cells = ", ".join(f"{c:.17g}" for c in row)
                fh.write(f"{xi:.17g}, {cells}\n")

    @classmethod
    def load_csv(cls, path) -> "GridFunction":
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                rows.append([float(c) for c in line.split(",")])
        arr = np.asarray(rows, dtype=float)
        x = arr[:, 0]
        spacing = float(x[1] - x[0])
        return cls(float(x[0]), spacing, arr[:, 1:])


@dataclass(frozen=True)
class State:
    """Position/velocity pair (u, v) on a shared lattice."""

    u: GridFunction
    v: GridFunction

    def __post_init__(self):
        if not self.u.same_lattice(self.v):
            raise ValueError("u and v must share one lattice")

    @property
    def spacing(self) -> float:
        return self.u.spacing

    @property
    def origin(self) -> float:
        return self.u.origin

    def __sub__(self, other: "State") -> "State":
        return State(self.u - other.u, self.v - other.v)

    def copy(self) -> "State":
        return State(
            self.u.with_values(self.u.values.copy()),
            self.v.with_values(self.v.values.copy()),
        )

    def save(self, prefix) -> None:
        self.u.save_csv(f"{prefix}.u.csv")
        self.v.save_csv(f"{prefix}.v.csv")

    @classmethod
    def load(cls, prefix) -> "State":
        return cls(GridFunction.load_csv(f"{prefix}.u.csv"), GridFunction.load_csv(f"{prefix}.v.csv"))


@dataclass(frozen=True)
class LightCone:
    """Backward light cone with apex at time `horizon` over `center`."""

    center: float
    horizon: float

    def interval(self, t: float) -> tuple[float, float]:
        if t >= self.horizon:
            raise HorizonExceeded(f"t={t} is not below the cone horizon {self.horizon}")
        rad = self.horizon - t
        return (self.center - rad, self.center + rad)


# ---------------------------------------------------------------------------
# derivatives (second-order central, one-sided second-order at the ends)
# ---------------------------------------------------------------------------

def derivative1(values: np.ndarray, spacing: float) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - v[:-2]) / (2.0 * spacing)
    out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * spacing)
    out[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * spacing)
    return out


def derivative2(values: np.ndarray, spacing: float) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    h2 = spacing * spacing
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h2
    out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h2
    out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h2
    return out


# ---------------------------------------------------------------------------
# interval quadrature
# ---------------------------------------------------------------------------

def _check_interval(f: GridFunction, a: float, b: float) -> tuple[float, float]:
    tol = _ALIGN_TOL * max(1.0, abs(a), abs(b)) + _ALIGN_TOL * f.spacing
    if b <= a:
        raise IntervalOutsideGrid(f"empty interval ({a}, {b})")
    if a < f.origin - tol or b > f.right + tol:
        raise IntervalOutsideGrid(
            f"interval ({a}, {b}) not inside lattice [{f.origin}, {f.right}]"
        )
    return max(a, f.origin), min(b, f.right)


def integrate_samples(samples: np.ndarray, origin: float, spacing: float, a: float, b: float) -> float:
    """Trapezoid integral of scalar samples over (a, b) with fractional end cells.

    Endpoint values off the lattice are linearly interpolated, which keeps the
    integral continuous in the interval endpoints.
    """
    w = np.asarray(samples, dtype=float)
    m = w.shape[0]
    pos_a = (a - origin) / spacing
    pos_b = (b - origin) / spacing
    i0 = int(math.ceil(pos_a - 1e-9))
    i1 = int(math.floor(pos_b + 1e-9))
    i0 = max(i0, 0)
    i1 = min(i1, m - 1)

    def interp(pos: float) -> float:
        j = min(max(int(math.floor(pos)), 0), m - 2)
        frac = pos - j
        return (1.0 - frac) * w[j] + frac * w[j + 1]

    if i1 < i0:  # interval inside a single cell
        return 0.5 * (b - a) * (interp(pos_a) + interp(pos_b))

    total = 0.0
    if i1 > i0:
        total = spacing * (w[i0:i1 + 1].sum() - 0.5 * (w[i0] + w[i1]))
    wa = (i0 - pos_a) * spacing
    if wa > 1e-14 * spacing:
        total += 0.5 * wa * (interp(pos_a) + w[i0])
    wb = (pos_b - i1) * spacing
    if wb > 1e-14 * spacing:
        total += 0.5 * wb * (w[i1] + interp(pos_b))
    return float(total)


def sobolev_sq(f: GridFunction, interval: tuple[float, float], order: int) -> float:
    """Squared H^order norm over the interval (sum over derivative orders)."""
    if order not in (0, 1, 2):
        raise UnsupportedOrder(f"order must be 0, 1 or 2, got {order}")
    a, b = _check_interval(f, *interval)
    total = integrate_samples((f.values ** 2).sum(axis=1), f.origin, f.spacing, a, b)
    if order >= 1:
        d1 = derivative1(f.values, f.spacing)
        total += integrate_samples((d1 ** 2).sum(axis=1), f.origin, f.spacing, a, b)
    if order == 2:
        d2 = derivative2(f.values, f.spacing)
        total += integrate_samples((d2 ** 2).sum(axis=1), f.origin, f.spacing, a, b)
    return float(total)


def sobolev_norm(f: GridFunction, interval: tuple[float, float], order: int) -> float:
    """H^order(a, b) norm of an R^n-valued grid function."""
    return math.sqrt(sobolev_sq(f, interval, order))


def l2_inner(f: GridFunction, g: GridFunction, interval: tuple[float, float]) -> float:
    a, b = _check_interval(f, *interval)
    integrand = (f.values * g.values).sum(axis=1)
    return integrate_samples(integrand, f.origin, f.spacing, a, b)


def light_cone_norm(z: State, cone: LightCone, t: float) -> float:
    """Halved squared cone norm: (|u|_{H^2(B)}^2 + |v|_{H^1(B)}^2) / 2 on B(center, horizon - t)."""
    interval = cone.interval(t)
    return 0.5 * (sobolev_sq(z.u, interval, 2) + sobolev_sq(z.v, interval, 1))


def state_norm(z: State, interval: tuple[float, float], orders: tuple[int, int] = (2, 1)) -> float:
    """Plain product norm sqrt(|u|_{H^a}^2 + |v|_{H^b}^2) over an interval."""
    return math.sqrt(sobolev_sq(z.u, interval, orders[0]) + sobolev_sq(z.v, interval, orders[1]))


# ---------------------------------------------------------------------------
# reflection extension
# ---------------------------------------------------------------------------

# Coefficients a_i solving sum_i a_i (-lambda_i)^j = 1 for j = 0..k with
# reflection multipliers lambda = (1, .., k+1): continuity of the first k
# derivatives across the cut.
_REFLECTION = {
    0: (1.0,),
    1: (3.0, -2.0),
    2: (6.0, -8.0, 3.0),
}

# C^2 quintic ramp used for every cutoff in the package.
def smoothstep(s: np.ndarray) -> np.ndarray:
    s = np.clip(s, 0.0, 1.0)
    return s * s * s * (10.0 + s * (-15.0 + 6.0 * s))


def _edge_cutoff(sigma: np.ndarray) -> np.ndarray:
    """1 for sigma <= 1/4, C^2 down to 0 at sigma = 1/2 (sigma = offset / r)."""
    return 1.0 - smoothstep((sigma - 0.25) / 0.25)


def extend_array(values: np.ndarray, i_lo: int, i_hi: int, order: int) -> None:
    """In-place reflection extension of `values` outside the core [i_lo, i_hi].

    The core half-width in cells is rho = (i_hi - i_lo) / 2; cells beyond the
    core receive the Hestenes reflection times the C^2 edge cutoff, identically
    zero past half the core width.  Cells outside the array are simply absent
    (the lattice edge truncates the far tail, which lives outside every
    quantity of interest).
    """
    if order not in _REFLECTION:
        raise UnsupportedOrder(f"extension order must be 0, 1 or 2, got {order}")
    coeffs = _REFLECTION[order]
    m = values.shape[0]
    rho_cells = (i_hi - i_lo) // 2
    if rho_cells <= 0:
        raise IntervalOutsideGrid("extension core is empty")

    # right side: offsets j = 1 .. m - 1 - i_hi
    n_right = m - 1 - i_hi
    if n_right > 0:
        j = np.arange(1, n_right + 1)
        chi = _edge_cutoff(j / rho_cells)
        acc = np.zeros((n_right,) + values.shape[1:])
        live = chi > 0.0
        if np.any(live):
            for lam, a in enumerate(coeffs, start=1):
                src = i_hi - lam * j[live]
                acc[live] += a * values[src]
        values[i_hi + 1:] = chi.reshape((-1,) + (1,) * (acc.ndim - 1)) * acc

    n_left = i_lo
    if n_left > 0:
        j = np.arange(1, n_left + 1)
        chi = _edge_cutoff(j / rho_cells)
        acc = np.zeros((n_left,) + values.shape[1:])
        live = chi > 0.0
        if np.any(live):
            for lam, a in enumerate(coeffs, start=1):
                src = i_lo + lam * j[live]
                acc[live] += a * values[src]
        block = chi.reshape((-1,) + (1,) * (acc.ndim - 1)) * acc
        values[i_lo - 1::-1] = block


def extend(f: GridFunction, r: float, order: int) -> GridFunction:
    """Extension from (-r, r) to the line: equals f on the core, 0 outside (-2r, 2r).

    The input lattice must contain lattice points at both -r and +r; samples
    outside the core are ignored (restriction semantics).  The result lives on
    a lattice covering [-2r, 2r] with the same spacing and phase.
    """
    if order not in _REFLECTION:
        raise UnsupportedOrder(f"extension order must be 0, 1 or 2, got {order}")
    dx = f.spacing
    pos_lo = (-r - f.origin) / dx
    pos_hi = (r - f.origin) / dx
    i_lo = int(round(pos_lo))
    i_hi = int(round(pos_hi))
    if (
        abs(pos_lo - i_lo) > 1e-6
        or abs(pos_hi - i_hi) > 1e-6
        or i_lo < 0
        or i_hi > f.npoints - 1
        or i_hi - i_lo < 4
    ):
        raise IntervalOutsideGrid(
            f"core (-{r}, {r}) must be lattice-aligned and inside [{f.origin}, {f.right}]"
        )

    core = f.values[i_lo:i_hi + 1]
    pad = int(math.ceil(r / dx - 1e-9))  # reaches at least -2r on the left
    m_out = (i_hi - i_lo) + 2 * pad + 1
    out = np.zeros((m_out, f.ncomp))
    out[pad:pad + (i_hi - i_lo) + 1] = core
    extend_array(out, pad, pad + (i_hi - i_lo), order)
    return GridFunction(-r - pad * dx, dx, out)


# ---------------------------------------------------------------------------
# interpolation inequalities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InterpolationReport:
    variant: str
    lhs: float
    rhs: float
    holds: bool
    constant: float | None = None


def interpolation_check(u: GridFunction, interval: tuple[float, float], variant: str) -> InterpolationReport:
    """Check |u|_sup^2 against the two product bounds.

    variant "standard": |u|_inf^2 <= k_e^2 |u|_{L^2(I)} |u|_{H^1(I)} with
    k_e = 2 max(1, 1/sqrt(|I|)).  variant "gn": the full-line bound
    |u|_inf^2 <= |u|_{L^2}^2 + 2 |u|_{L^2} |u'|_{L^2}; meaningful when u decays
    inside the interval.
    """
    a, b = _check_interval(u, *interval)
    x = u.x
    mask = (x >= a - 1e-12) & (x <= b + 1e-12)
    sup_sq = float((u.values[mask] ** 2).sum(axis=1).max())
    l2 = math.sqrt(integrate_samples((u.values ** 2).sum(axis=1), u.origin, u.spacing, a, b))
    d1 = derivative1(u.values, u.spacing)
    d1_l2 = math.sqrt(integrate_samples((d1 ** 2).sum(axis=1), u.origin, u.spacing, a, b))
    if variant == "standard":
        h1 = math.sqrt(l2 * l2 + d1_l2 * d1_l2)
        k_e = 2.0 * max(1.0, 1.0 / math.sqrt(b - a))
        rhs = k_e * k_e * l2 * h1
        return InterpolationReport("standard", sup_sq, rhs, sup_sq <= rhs * (1 + 1e-12) + 1e-15, k_e)
    if variant == "gn":
        rhs = l2 * l2 + 2.0 * l2 * d1_l2
        return InterpolationReport("gn", sup_sq, rhs, sup_sq <= rhs * (1 + 1e-12) + 1e-15, None)
    raise ValueError(f"unknown variant {variant!r}")
