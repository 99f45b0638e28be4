"""Mild-form integrators for the localized geometric wave system.

The time step equals the grid spacing, so the free evolution is the exact
lattice wave group.  One step applies

    z_{m+1} = S_dt (z_m + (0, noise)) + dt * down(S_{dt/2} F(t_mid, S_{dt/2} up(z_m)))

where F bundles the curvature drift and the control forcing, evaluated at the
temporal midpoint on a twice-refined lattice (second-order quadrature), and
the noise term uses the left-point state (Ito consistency).  Setting the noise
amplitude to zero skips the noise block and reproduces the deterministic
skeleton bitwise.

States are carried as arrays of shape (npoints, batch, ncomp); a batch is a
family of trajectories evolved in lock-step (Monte Carlo trials, finite
difference probes).  Elementwise kernels and axis-0 reductions keep each
column bitwise independent of its neighbours, so batching is purely a
throughput device.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BlowupDetected,
    ConeExhausted,
    DimensionMismatch,
    IntervalOutsideGrid,
    NonLatticeTime,
    OffManifoldInitialData,
)
from .function_spaces import GridFunction, LightCone, State, derivative1, derivative2, extend_array, smoothstep
from .geometry import DiffusionField, ManifoldModel
from .noise import NoiseBasis
from .rng import stream
from .wave_group import GroupStep, apply_arrays

__all__ = [
    "LocalizationParams",
    "Control",
    "Trajectory",
    "taper_factor",
    "window_norm",
    "curvature_force",
    "localized_drift",
    "localized_diffusion",
    "q_transform",
    "q_transform_derivative",
    "solve_skeleton",
    "solve_stochastic",
    "solve_batch",
    "blowup_times",
    "threshold_time",
    "mild_residual",
]


# ---------------------------------------------------------------------------
# parameter and result types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LocalizationParams:
    """Cone base radius and energy-cutoff levels for the localized maps.

    `k` fixes the taper level; None lets the solver start at twice the initial
    window norm and double on each crossing, up to `k_max`.
    """

    radius: float
    k: int | None = None
    k_max: int = 1024


@dataclass(frozen=True)
class Control:
    """Piecewise-constant-in-time forcing rate in noise-basis coordinates."""

    coeffs: np.ndarray  # (rows, dim)
    dt: float

    def __post_init__(self):
        coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        object.__setattr__(self, "coeffs", coeffs)
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("control coefficients must be finite")
        if self.dt <= 0:
            raise ValueError("control step must be positive")

    @property
    def dim(self) -> int:
        return self.coeffs.shape[1]

    @property
    def rows(self) -> int:
        return self.coeffs.shape[0]

    def rate_at(self, t: float) -> np.ndarray:
        idx = min(int(t / self.dt + 1e-9), self.rows - 1)
        return self.coeffs[max(idx, 0)]

    def squared_norm(self) -> float:
        """Squared L2-in-time norm of the rate, sum dt*|row|^2."""
        return float(self.dt * (self.coeffs ** 2).sum())

    @classmethod
    def zeros(cls, rows: int, dim: int, dt: float) -> "Control":
        return cls(np.zeros((rows, dim)), dt)


@dataclass
class Trajectory:
    """A solved path: states on lattice times plus the per-step bookkeeping.

    energy_trace carries per-step arrays: "taper_norm" (window norm driving
    the taper), "taper", "k_level", and "cone_energy" when a stopping cone was
    supplied.  noise_increments holds the raw Wiener coefficient rows (not
    scaled by sqrt(eps)).  For batched runs the arrays keep their batch axis
    and states is None unless requested.
    """

    times: np.ndarray
    states: list | None
    stopping_times: dict
    energy_trace: dict
    noise_increments: np.ndarray | None
    control: Control | None
    metadata: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    def final_state(self) -> State:
        if not self.states:
            raise ValueError("trajectory was run without state storage")
        return self.states[-1]


# ---------------------------------------------------------------------------
# localized fields
# ---------------------------------------------------------------------------

def taper_factor(norm, k):
    """1 below the cutoff level, linear ramp to 0 on [k, 2k], 0 beyond."""
    return np.clip(2.0 - np.asarray(norm, dtype=float) / np.asarray(k, dtype=float), 0.0, 1.0)


def curvature_force(manifold: ManifoldModel, u: np.ndarray, v: np.ndarray, ux: np.ndarray) -> np.ndarray:
    """Pointwise curvature term A_u(v,v) - A_u(u_x,u_x) via the collar extension."""
    flat = u.reshape(-1, u.shape[-1])
    out = manifold.extended_sff_perp(flat, v.reshape(flat.shape), v.reshape(flat.shape))
    out -= manifold.extended_sff_perp(flat, ux.reshape(flat.shape), ux.reshape(flat.shape))
    return out.reshape(u.shape)


def _window_indices(origin: float, spacing: float, npoints: int, s: float) -> tuple[int, int]:
    lo = (-s - origin) / spacing
    hi = (s - origin) / spacing
    i_lo, i_hi = round(lo), round(hi)
    if abs(lo - i_lo) > 1e-6 or abs(hi - i_hi) > 1e-6:
        raise IntervalOutsideGrid(f"window (+-{s}) is not lattice-aligned")
    if i_lo < 0 or i_hi > npoints - 1 or i_hi - i_lo < 4:
        raise IntervalOutsideGrid(f"window (+-{s}) does not fit the lattice")
    return i_lo, i_hi


def _trapezoid_weights(i_lo: int, i_hi: int, npoints: int, spacing: float) -> np.ndarray:
    w = np.zeros(npoints)
    w[i_lo:i_hi + 1] = spacing
    w[i_lo] = w[i_hi] = 0.5 * spacing
    return w


def _window_norm(u, v, weights, spacing):
    """H^2 x H^1 window norm of batched arrays, one value per batch column."""
    du = derivative1(u, spacing)
    d2u = derivative2(u, spacing)
    dv = derivative1(v, spacing)
    total = np.zeros(u.shape[1])
    for arr in (u, du, d2u, v, dv):
        total += np.einsum("i,ibc->b", weights, arr * arr)
    return np.sqrt(total)


def _cone_energy(u, v, weights, spacing):
    """Light-cone energy (half the squared H^2 x H^1 norm) per batch column."""
    du = derivative1(u, spacing)
    d2u = derivative2(u, spacing)
    dv = derivative1(v, spacing)
    total = np.zeros(u.shape[1])
    for arr in (u, du, d2u, v, dv):
        total += np.einsum("i,ibc->b", weights, arr * arr)
    return 0.5 * total


def _extended(values: np.ndarray, i_lo: int, i_hi: int, order: int = 1) -> np.ndarray:
    out = values.copy()
    extend_array(out, i_lo, i_hi, order)
    return out


def _window_fields(u: np.ndarray, v: np.ndarray, i_lo: int, i_hi: int) -> tuple[np.ndarray, np.ndarray]:
    """Reflection-extended copies of (u, v) built from window values only.

    Derivative stencils at the window boundary must not read cells outside the
    window: those carry lattice-edge junk of size O(1/dx) in the second
    derivative.  Order-2 reflection keeps the one-sided derivatives accurate.
    """
    ue = u.copy()
    ve = v.copy()
    extend_array(ue, i_lo, i_hi, 2)
    extend_array(ve, i_lo, i_hi, 2)
    return ue, ve


def window_norm(z: State, s: float) -> float:
    """H^2 x H^1 norm of a state over (-s, s), one-sided at the boundary.

    This is the norm driving the taper; it matches the per-step values the
    integrator records in ``energy_trace["taper_norm"]``.
    """
    dx = z.spacing
    n = z.u.npoints
    i_lo, i_hi = _window_indices(z.origin, dx, n, s)
    weights = _trapezoid_weights(i_lo, i_hi, n, dx)
    ue, ve = _window_fields(z.u.values[:, None, :], z.v.values[:, None, :], i_lo, i_hi)
    return float(_window_norm(ue, ve, weights, dx)[0])


def localized_drift(t: float, z: State, loc: LocalizationParams, manifold: ManifoldModel, k: int | None = None) -> State:
    """Tapered, window-extended curvature drift as a state increment (0, F)."""
    r = loc.radius
    if t >= r:
        raise ConeExhausted(f"time {t} has exhausted the localization radius {r}")
    dx = z.spacing
    u, v = z.u.values, z.v.values
    i_lo, i_hi = _window_indices(z.origin, dx, z.u.npoints, r - t)
    weights = _trapezoid_weights(i_lo, i_hi, z.u.npoints, dx)
    ue, ve = _window_fields(u[:, None, :], v[:, None, :], i_lo, i_hi)
    norm = _window_norm(ue, ve, weights, dx)[0]
    k_eff = k if k is not None else (loc.k if loc.k is not None else max(1, math.ceil(2 * norm)))
    theta = float(taper_factor(norm, k_eff))
    if theta == 0.0:
        force = np.zeros_like(u)
    else:
        ue2, ve2 = ue[:, 0, :], ve[:, 0, :]
        ux = derivative1(ue2, dx)
        force = theta * _extended(curvature_force(manifold, ue2, ve2, ux), i_lo, i_hi)
    return State(z.u.with_values(np.zeros_like(u)), z.v.with_values(force))


def localized_diffusion(
    t: float,
    z: State,
    loc: LocalizationParams,
    basis: NoiseBasis,
    manifold: ManifoldModel,
    diffusion: DiffusionField,
    k: int | None = None,
) -> np.ndarray:
    """Per-mode second components of the localized noise operator.

    Returns an array of shape (basis.dim, npoints, ncomp): mode_j times the
    window-extended diffusion field, under the same taper as the drift.
    """
    r = loc.radius
    if t >= r:
        raise ConeExhausted(f"time {t} has exhausted the localization radius {r}")
    dx = z.spacing
    u, v = z.u.values, z.v.values
    i_lo, i_hi = _window_indices(z.origin, dx, z.u.npoints, r - t)
    weights = _trapezoid_weights(i_lo, i_hi, z.u.npoints, dx)
    ue, ve = _window_fields(u[:, None, :], v[:, None, :], i_lo, i_hi)
    norm = _window_norm(ue, ve, weights, dx)[0]
    k_eff = k if k is not None else (loc.k if loc.k is not None else max(1, math.ceil(2 * norm)))
    theta = float(taper_factor(norm, k_eff))
    y_ext = theta * _extended(diffusion(u), i_lo, i_hi)
    modes = basis.evaluate(z.u.x)  # (dim, npoints)
    return modes[:, :, None] * y_ext[None, :, :]


def _radial_cutoff(x: np.ndarray, r: float) -> np.ndarray:
    """C^2 plateau: 1 on [-r, r], 0 outside (-2r, 2r)."""
    return 1.0 - smoothstep((np.abs(x) - r) / r)


def q_transform(z: State, loc: LocalizationParams, manifold: ManifoldModel) -> State:
    """Collar reflection composed with the plateau cutoff: (phi*Y(u), phi*Y'(u)v)."""
    phi = _radial_cutoff(z.u.x, loc.radius)[:, None]
    u, v = z.u.values, z.v.values
    new_u = phi * manifold.involution(u)
    new_v = phi * manifold.involution_jacobian(u, v)
    return State(z.u.with_values(new_u), z.v.with_values(new_v))


def q_transform_derivative(
    z: State, w: State, loc: LocalizationParams, manifold: ManifoldModel
) -> State:
    """Directional derivative of q_transform at z in the direction w."""
    phi = _radial_cutoff(z.u.x, loc.radius)[:, None]
    u, v = z.u.values, z.v.values
    w1, w2 = w.u.values, w.v.values
    first = phi * manifold.involution_jacobian(u, w1)
    second = phi * (manifold.involution_hessian(u, v, w1) + manifold.involution_jacobian(u, w2))
    return State(z.u.with_values(first), z.v.with_values(second))


# ---------------------------------------------------------------------------
# the integrator core
# ---------------------------------------------------------------------------

def _mode_field(coeffs: np.ndarray, modes: np.ndarray) -> np.ndarray:
    """(B, dim) coefficients times (dim, n) modes, accumulated mode by mode.

    BLAS matmul picks different kernels for different batch widths, which
    breaks bitwise column/single agreement; the explicit fixed-order sum does
    not (dim is small, so this costs nothing).
    """
    out = np.zeros((coeffs.shape[0], modes.shape[1]))
    for j in range(modes.shape[0]):
        out += coeffs[:, j, None] * modes[j]
    return out


def _upsample(a: np.ndarray) -> np.ndarray:
    out = np.empty((2 * a.shape[0] - 1,) + a.shape[1:])
    out[::2] = a
    out[1::2] = 0.5 * (a[:-1] + a[1:])
    return out


def _check_initial_data(manifold: ManifoldModel, u0: np.ndarray, v0: np.ndarray) -> None:
    res = float(manifold.constraint_residual(u0.reshape(-1, u0.shape[-1])).max())
    if res > 1e-8:
        raise OffManifoldInitialData(f"initial position is off-manifold (residual {res:.3e})")
    flat_u = u0.reshape(-1, u0.shape[-1])
    flat_v = v0.reshape(-1, v0.shape[-1])
    proj = manifold.tangent_project_at(manifold.nearest_point(flat_u), flat_v)
    defect = float(np.abs(flat_v - proj).max())
    if defect > 1e-8 * (1.0 + float(np.abs(flat_v).max())):
        raise OffManifoldInitialData(f"initial velocity is not tangent (defect {defect:.3e})")


def _integrate(
    u0: np.ndarray,
    v0: np.ndarray,
    *,
    origin: float,
    spacing: float,
    manifold: ManifoldModel,
    loc: LocalizationParams,
    horizon: float,
    basis: NoiseBasis | None = None,
    diffusion: DiffusionField | None = None,
    eps: float = 0.0,
    control_rates: np.ndarray | None = None,  # (steps, B, dim)
    master_seed: int = 0,
    trial_ids=None,
    renormalize: bool = True,
    keep_states: bool = True,
    observer=None,
    stop_cone: LightCone | None = None,
    stop_threshold: float | None = None,
):
    n, nbatch, ncomp = u0.shape
    dx = spacing
    r = loc.radius
    steps = GroupStep.from_time(horizon, dx).shift_count
    if steps <= 0:
        raise ValueError(f"horizon {horizon} must cover at least one step of {dx}")
    if horizon >= r:
        raise ConeExhausted(f"horizon {horizon} reaches the localization radius {r}")
    _check_initial_data(manifold, u0, v0)

    needs_noise = eps > 0.0
    if needs_noise and (basis is None or diffusion is None):
        raise ValueError("stochastic runs need a noise basis and a diffusion field")
    if control_rates is not None:
        if basis is None or diffusion is None:
            raise ValueError("a control needs the noise basis and diffusion field it acts through")
        if control_rates.shape[0] < steps:
            raise DimensionMismatch(
                f"control provides {control_rates.shape[0]} rows for {steps} steps"
            )
        if control_rates.shape[2] != basis.dim:
            raise DimensionMismatch(
                f"control rows have dimension {control_rates.shape[2]}, basis has {basis.dim}"
            )
    if needs_noise and trial_ids is None:
        trial_ids = list(range(nbatch))

    x = origin + dx * np.arange(n)
    dxf = 0.5 * dx
    xf = origin + dxf * np.arange(2 * n - 1)
    modes_coarse = basis.evaluate(x) if needs_noise else None
    modes_fine = basis.evaluate(xf) if control_rates is not None else None

    if stop_cone is not None:
        GroupStep.from_time(stop_cone.center - origin, dx)  # center must sit on the lattice
        horizon_cells = GroupStep.from_time(stop_cone.horizon, dx).shift_count
        if horizon_cells <= steps:
            raise ConeExhausted("stopping cone closes before the simulation horizon")

    u = u0.astype(float, copy=True)
    v = v0.astype(float, copy=True)

    # taper levels per batch column
    f_lo, f_hi = _window_indices(origin, dx, n, r)
    w_full = _trapezoid_weights(f_lo, f_hi, n, dx)
    norm0 = _window_norm(*_window_fields(u, v, f_lo, f_hi), w_full, dx)
    if loc.k is not None:
        k = np.full(nbatch, int(loc.k))
    else:
        k = np.maximum(1, np.ceil(2.0 * norm0)).astype(int)
    k_init = k.copy()

    times = dx * np.arange(steps + 1)
    trace_norm = np.zeros((steps + 1, nbatch))
    trace_taper = np.zeros((steps + 1, nbatch))
    trace_k = np.zeros((steps + 1, nbatch), dtype=int)
    trace_cone = np.full((steps + 1, nbatch), np.nan) if stop_cone is not None else None
    tau_k_hits = [[] for _ in range(nbatch)]
    tau_n = np.full(nbatch, np.nan)
    states = [] if keep_states else None
    noise_log = np.zeros((steps, nbatch, basis.dim)) if needs_noise else None

    for m in range(steps + 1):
        t = m * dx
        s = r - t
        i_lo, i_hi = _window_indices(origin, dx, n, s)
        weights = _trapezoid_weights(i_lo, i_hi, n, dx)
        norm_m = _window_norm(*_window_fields(u, v, i_lo, i_hi), weights, dx)

        crossing = norm_m >= k
        while np.any(crossing):
            for b in np.nonzero(crossing)[0]:
                tau_k_hits[b].append((int(k[b]), float(t)))
            k = np.where(crossing, 2 * k, k)
            if np.any(k > loc.k_max):
                b = int(np.nonzero(k > loc.k_max)[0][0])
                raise BlowupDetected(
                    f"window norm {norm_m[b]:.3e} exhausted cutoff levels up to {loc.k_max} at t={t}"
                )
            crossing = norm_m >= k
        theta = taper_factor(norm_m, k)

        trace_norm[m] = norm_m
        trace_taper[m] = theta
        trace_k[m] = k
        if stop_cone is not None:
            a, b_ = stop_cone.interval(t)
            ci_lo, ci_hi = _window_indices(origin - stop_cone.center, dx, n, 0.5 * (b_ - a))
            cw = _trapezoid_weights(ci_lo, ci_hi, n, dx)
            energy_m = _cone_energy(u, v, cw, dx)
            trace_cone[m] = energy_m
            if stop_threshold is not None:
                hit = np.isnan(tau_n) & (np.sqrt(2.0 * energy_m) >= stop_threshold)
                tau_n[hit] = t
        if observer is not None:
            observer(m, t, u, v)
        if keep_states:
            states.append((u.copy(), v.copy()))
        if m == steps:
            break

        # noise increment, left-point evaluation
        if needs_noise:
            dw = np.empty((nbatch, basis.dim))
            for b in range(nbatch):
                dw[b] = stream(master_seed, trial_ids[b], m).normal(0.0, math.sqrt(dx), basis.dim)
            noise_log[m] = dw
            wfield = _mode_field(dw, modes_coarse)  # (B, n)
            y_ext = _extended(diffusion(u.reshape(-1, ncomp)).reshape(u.shape), i_lo, i_hi)
            v_star = v + (math.sqrt(eps) * theta)[None, :, None] * y_ext * wfield.T[:, :, None]
        else:
            v_star = v

        # midpoint drift + control on the refined lattice
        uf = _upsample(u)
        vf = _upsample(v)
        uf, vf = apply_arrays(uf, vf, dxf, 1)
        s_mid = s - dxf
        fi_lo, fi_hi = _window_indices(origin, dxf, 2 * n - 1, s_mid)
        fweights = _trapezoid_weights(fi_lo, fi_hi, 2 * n - 1, dxf)
        ufe, vfe = _window_fields(uf, vf, fi_lo, fi_hi)
        norm_mid = _window_norm(ufe, vfe, fweights, dxf)
        theta_mid = taper_factor(norm_mid, k)

        uxf = derivative1(ufe, dxf)
        force = _extended(curvature_force(manifold, ufe, vfe, uxf), fi_lo, fi_hi)
        if control_rates is not None:
            yf = _extended(diffusion(ufe.reshape(-1, ncomp)).reshape(ufe.shape), fi_lo, fi_hi)
            cfield = _mode_field(control_rates[m], modes_fine)  # (B, nf)
            force = force + yf * cfield.T[:, :, None]
        force *= theta_mid[None, :, None]
        fu, fv = apply_arrays(np.zeros_like(force), force, dxf, 1)

        u, v = apply_arrays(u, v_star, dx, 1)
        u = u + dx * fu[::2]
        v = v + dx * fv[::2]

        if renormalize:
            # trigger and project per batch column, so a column's evolution is
            # bitwise independent of its neighbours
            res = manifold.constraint_residual(u.reshape(-1, ncomp)).reshape(n, nbatch)
            cols = np.nonzero(res.max(axis=0) > 1e-12)[0]
            for b in cols:
                ub = manifold.nearest_point(u[:, b, :])
                u[:, b, :] = ub
                v[:, b, :] = manifold.tangent_project_at(ub, v[:, b, :])

    energy_trace = {"taper_norm": trace_norm, "taper": trace_taper, "k_level": trace_k}
    if trace_cone is not None:
        energy_trace["cone_energy"] = trace_cone
    stopping = {
        "tau_k": tau_k_hits,
        "tau_threshold": tau_n if stop_cone is not None and stop_threshold is not None else None,
    }
    return times, states, stopping, energy_trace, noise_log, k_init, k


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------

def _as_batch(z0: State) -> tuple[np.ndarray, np.ndarray]:
    return z0.u.values[:, None, :], z0.v.values[:, None, :]


def _single_trajectory(z0: State, result, control, metadata) -> Trajectory:
    times, raw_states, stopping, trace, noise_log, k_init, k_final = result
    states = None
    if raw_states is not None:
        states = [
            State(z0.u.with_values(us[:, 0, :]), z0.v.with_values(vs[:, 0, :]))
            for us, vs in raw_states
        ]
    tau_thr = stopping["tau_threshold"]
    stopping_times = {
        "tau_k": stopping["tau_k"][0],
        "tau_threshold": None if tau_thr is None or np.isnan(tau_thr[0]) else float(tau_thr[0]),
    }
    energy_trace = {key: arr[:, 0] for key, arr in trace.items()}
    metadata = dict(metadata, k_init=int(k_init[0]), k_final=int(k_final[0]))
    increments = None if noise_log is None else noise_log[:, 0, :]
    return Trajectory(times, states, stopping_times, energy_trace, increments, control, metadata)


def _control_rates(control: Control | None, steps: int, spacing: float, nbatch: int):
    if control is None:
        return None
    if abs(control.dt - spacing) > 1e-12 * (1 + spacing):
        raise NonLatticeTime(
            f"control step {control.dt} must equal the solver step {spacing}"
        )
    rates = control.coeffs[:steps][:, None, :]
    return np.broadcast_to(rates, (rates.shape[0], nbatch, rates.shape[2]))


def solve_skeleton(
    z0: State,
    control: Control | None,
    horizon: float,
    loc: LocalizationParams,
    *,
    manifold: ManifoldModel,
    basis: NoiseBasis | None = None,
    diffusion: DiffusionField | None = None,
    renormalize: bool = True,
    keep_states: bool = True,
    observer=None,
    stop_cone: LightCone | None = None,
    stop_threshold: float | None = None,
) -> Trajectory:
    """Deterministic controlled trajectory (the zero-noise solution map)."""
    u0, v0 = _as_batch(z0)
    steps = GroupStep.from_time(horizon, z0.spacing).shift_count
    rates = _control_rates(control, steps, z0.spacing, 1)
    result = _integrate(
        u0, v0,
        origin=z0.origin, spacing=z0.spacing, manifold=manifold, loc=loc,
        horizon=horizon, basis=basis, diffusion=diffusion, eps=0.0,
        control_rates=rates, renormalize=renormalize, keep_states=keep_states,
        observer=observer, stop_cone=stop_cone, stop_threshold=stop_threshold,
    )
    meta = {"eps": 0.0, "seed": None, "trial_id": None, "dt": z0.spacing,
            "radius": loc.radius, "renormalize": renormalize}
    return _single_trajectory(z0, result, control, meta)


def solve_stochastic(
    z0: State,
    eps: float,
    control: Control | None,
    horizon: float,
    loc: LocalizationParams,
    *,
    manifold: ManifoldModel,
    basis: NoiseBasis,
    diffusion: DiffusionField,
    master_seed: int = 0,
    trial_id: int = 0,
    renormalize: bool = True,
    keep_states: bool = True,
    observer=None,
    stop_cone: LightCone | None = None,
    stop_threshold: float | None = None,
) -> Trajectory:
    """One noisy trajectory; eps = 0 reproduces solve_skeleton bitwise."""
    if eps < 0:
        raise ValueError(f"noise level must be nonnegative, got {eps}")
    u0, v0 = _as_batch(z0)
    steps = GroupStep.from_time(horizon, z0.spacing).shift_count
    rates = _control_rates(control, steps, z0.spacing, 1)
    result = _integrate(
        u0, v0,
        origin=z0.origin, spacing=z0.spacing, manifold=manifold, loc=loc,
        horizon=horizon, basis=basis, diffusion=diffusion, eps=eps,
        control_rates=rates, master_seed=master_seed, trial_ids=[trial_id],
        renormalize=renormalize, keep_states=keep_states, observer=observer,
        stop_cone=stop_cone, stop_threshold=stop_threshold,
    )
    meta = {"eps": float(eps), "seed": int(master_seed), "trial_id": int(trial_id),
            "dt": z0.spacing, "radius": loc.radius, "renormalize": renormalize}
    return _single_trajectory(z0, result, control, meta)


def solve_batch(
    z0: State,
    eps: float,
    horizon: float,
    loc: LocalizationParams,
    *,
    manifold: ManifoldModel,
    basis: NoiseBasis | None = None,
    diffusion: DiffusionField | None = None,
    control: Control | None = None,
    control_rates: np.ndarray | None = None,
    nbatch: int | None = None,
    master_seed: int = 0,
    trial_ids=None,
    renormalize: bool = True,
    keep_states: bool = False,
    observer=None,
    stop_cone: LightCone | None = None,
    stop_threshold: float | None = None,
) -> Trajectory:
    """Evolve a family of trajectories in lock-step from shared initial data.

    The family may differ in noise streams (trial_ids) or in per-column
    control rates (control_rates of shape (steps, B, dim)); each column is
    bitwise identical to the corresponding single-trajectory solve.  Batched
    results keep the batch axis in the traces and noise log.
    """
    steps = GroupStep.from_time(horizon, z0.spacing).shift_count
    if control_rates is None:
        if nbatch is None:
            nbatch = len(trial_ids) if trial_ids is not None else 1
        rates = _control_rates(control, steps, z0.spacing, nbatch)
    else:
        if control is not None:
            raise ValueError("pass either a shared control or per-column rates, not both")
        control_rates = np.asarray(control_rates, dtype=float)
        if control_rates.ndim != 3:
            raise DimensionMismatch("per-column control rates must have shape (steps, B, dim)")
        nbatch = control_rates.shape[1]
        rates = control_rates
    u0, v0 = _as_batch(z0)
    u0 = np.broadcast_to(u0, (u0.shape[0], nbatch, u0.shape[2]))
    v0 = np.broadcast_to(v0, (v0.shape[0], nbatch, v0.shape[2]))
    times, states, stopping, trace, noise_log, k_init, k_final = _integrate(
        u0, v0,
        origin=z0.origin, spacing=z0.spacing, manifold=manifold, loc=loc,
        horizon=horizon, basis=basis, diffusion=diffusion, eps=eps,
        control_rates=rates, master_seed=master_seed, trial_ids=trial_ids,
        renormalize=renormalize, keep_states=keep_states, observer=observer,
        stop_cone=stop_cone, stop_threshold=stop_threshold,
    )
    meta = {"eps": float(eps), "seed": int(master_seed), "trial_ids": trial_ids,
            "dt": z0.spacing, "radius": loc.radius, "renormalize": renormalize,
            "k_init": k_init, "k_final": k_final, "nbatch": nbatch}
    return Trajectory(times, states, stopping, trace, noise_log, control, meta)


# ---------------------------------------------------------------------------
# trajectory diagnostics
# ---------------------------------------------------------------------------

def blowup_times(traj: Trajectory, loc: LocalizationParams, thresholds=None) -> list:
    """First lattice time each cutoff level is crossed, horizon if never."""
    norms = np.asarray(traj.energy_trace["taper_norm"])
    if norms.ndim != 1:
        raise ValueError("blowup_times expects a single-trajectory record")
    horizon = float(traj.times[-1])
    if thresholds is None:
        k0 = int(traj.metadata.get("k_init", 1))
        thresholds = [k0 * 2 ** i for i in range(12) if k0 * 2 ** i <= loc.k_max]
    out = []
    for k in thresholds:
        hits = np.nonzero(norms >= k)[0]
        out.append((int(k), float(traj.times[hits[0]]) if len(hits) else horizon))
    return out


def threshold_time(traj: Trajectory, threshold: float) -> float:
    """First time the recorded cone norm reaches the threshold, horizon if never."""
    cone = traj.energy_trace.get("cone_energy")
    if cone is None:
        raise ValueError("trajectory was run without a stopping cone")
    norms = np.sqrt(2.0 * np.asarray(cone))
    hits = np.nonzero(norms >= threshold)[0]
    return float(traj.times[hits[0]]) if len(hits) else float(traj.times[-1])


def mild_residual(
    traj: Trajectory,
    loc: LocalizationParams,
    *,
    manifold: ManifoldModel,
    basis: NoiseBasis | None = None,
    diffusion: DiffusionField | None = None,
) -> float:
    """Defect of the stored path in the integral (mild) form of the dynamics.

    Re-assembles S_T z0 + integral of transported drift/control (trapezoid in
    time) + transported realized noise kicks, and returns the H^2 x H^1 window
    norm of the difference from the stored final state.  First-order in the
    step by construction (the solver's midpoint quadrature is re-done here at
    the lattice times).
    """
    if not traj.states:
        raise ValueError("mild_residual needs stored states")
    z0 = traj.states[0]
    dx = z0.spacing
    n = z0.u.npoints
    steps = traj.steps
    eps = float(traj.metadata.get("eps", 0.0))
    r = loc.radius
    if eps > 0 and traj.noise_increments is None:
        raise ValueError("stochastic residual needs the noise increment log")

    modes = basis.evaluate(z0.u.x) if basis is not None else None
    acc_u = np.zeros_like(z0.u.values)
    acc_v = np.zeros_like(z0.v.values)
    uu, vv = z0.u.values, z0.v.values
    for m in range(steps):
        t = m * dx
        zm = traj.states[m]
        i_lo, i_hi = _window_indices(z0.origin, dx, n, r - t)
        theta = float(traj.energy_trace["taper"][m])
        um, vm = zm.u.values, zm.v.values
        ume, vme = _window_fields(um[:, None, :], vm[:, None, :], i_lo, i_hi)
        ume, vme = ume[:, 0, :], vme[:, 0, :]
        ux = derivative1(ume, dx)
        force = theta * _extended(curvature_force(manifold, ume, vme, ux), i_lo, i_hi)
        if traj.control is not None:
            yext = theta * _extended(diffusion(um), i_lo, i_hi)
            force = force + yext * (traj.control.rate_at(t) @ modes)[:, None]
        weight = 0.5 if m == 0 else 1.0
        kick = dx * weight * force
        if eps > 0:
            yext = theta * _extended(diffusion(um), i_lo, i_hi)
            wfield = traj.noise_increments[m] @ modes
            kick = kick + math.sqrt(eps) * yext * wfield[:, None]
        acc_u, acc_v = apply_arrays(acc_u, acc_v + kick, dx, 1)
        uu, vv = apply_arrays(uu, vv, dx, 1)

    # closing trapezoid weight: the final-time field is not transported
    zl = traj.states[steps]
    il, ih = _window_indices(z0.origin, dx, n, r - steps * dx)
    th = float(traj.energy_trace["taper"][steps])
    ule, vle = _window_fields(zl.u.values[:, None, :], zl.v.values[:, None, :], il, ih)
    ule, vle = ule[:, 0, :], vle[:, 0, :]
    fl = th * _extended(curvature_force(manifold, ule, vle, derivative1(ule, dx)), il, ih)
    if traj.control is not None:
        yl = th * _extended(diffusion(zl.u.values), il, ih)
        fl = fl + yl * (traj.control.rate_at(steps * dx) @ modes)[:, None]
    acc_v = acc_v + 0.5 * dx * fl

    zt = traj.states[steps]
    du = zt.u.values - (uu + acc_u)
    dv = zt.v.values - (vv + acc_v)
    w = _trapezoid_weights(il, ih, n, dx)
    due, dve = _window_fields(du[:, None, :], dv[:, None, :], il, ih)
    return float(_window_norm(due, dve, w, dx)[0])
