"""The 1-D linear wave group realized exactly on the lattice.

With unit propagation speed and time steps that are integer multiples of the
grid spacing, the d'Alembert solution is a combination of pure lattice shifts
plus a cumulative quadrature of the velocity.  The cumulative sum is taken
along the two index-parity chains (C[i+1] = C[i-1] + 2*dx*v[i]) so that it is
an exact right inverse of the central difference; this makes the group law,
time reversal, finite propagation speed, and homogeneous-energy conservation
hold to round-off rather than to quadrature accuracy.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientPadding, NonLatticeTime
from .function_spaces import State, derivative1, derivative2

__all__ = ["GroupStep", "apply_group", "apply_arrays", "generator", "midpoint_cumulative"]


@dataclass(frozen=True)
class GroupStep:
    """A group time expressed as a whole number of lattice cells."""

    shift_count: int
    spacing: float

    @classmethod
    def from_time(cls, t: float, spacing: float) -> "GroupStep":
        ratio = t / spacing
        nearest = round(ratio)
        if abs(ratio - nearest) > 1e-9 * (1.0 + abs(ratio)):
            raise NonLatticeTime(f"time {t} is not a lattice multiple of spacing {spacing}")
        return cls(int(nearest), float(spacing))

    @property
    def time(self) -> float:
        return self.shift_count * self.spacing


def _shift(values: np.ndarray, count: int) -> np.ndarray:
    """Translate rows by `count` cells, extending past the ends by the edge rows.

    Out-of-range indices are mapped to the outermost in-range index of the same
    parity.  For arrays whose edge bands are constant this is plain clamping;
    for the antiderivative chains, whose two parity chains settle on slightly
    different constants, it preserves the pattern exactly.
    """
    n = len(values)
    m = np.arange(n) + count
    over = (n - 1) - ((m - (n - 1)) % 2)
    under = m % 2
    idx = np.where(m > n - 1, over, np.where(m < 0, under, m))
    return values[idx]


def midpoint_cumulative(values: np.ndarray, spacing: float) -> np.ndarray:
    """Antiderivative samples C with C[i+1] - C[i-1] = 2*dx*values[i] exactly.

    The two parity chains are anchored at C[0] = 0 and a trapezoid seed for
    C[1]; the defining recursion makes the central difference of C reproduce
    `values` exactly away from the ends.
    """
    v = np.asarray(values, dtype=float)
    out = np.zeros_like(v)
    n = len(v)
    if n >= 2:
        out[1] = 0.5 * spacing * (v[0] + v[1])
    even = 2.0 * spacing * np.cumsum(v[1::2], axis=0)
    out[2::2] = even[: len(out[2::2])]
    odd = 2.0 * spacing * np.cumsum(v[2::2], axis=0)
    out[3::2] = out[1] + odd[: len(out[3::2])]
    return out


def _padding_defect(z: State, band: int) -> float:
    """How far the state is from being quiescent on the two edge bands.

    Quiescent means: velocity zero and position constant, so that clamped
    shifts act on the band exactly like shifts of the infinite lattice.
    """
    u, v = z.u.values, z.v.values
    left_u = np.abs(u[:band] - u[0]).max() if band > 0 else 0.0
    right_u = np.abs(u[-band:] - u[-1]).max() if band > 0 else 0.0
    left_v = np.abs(v[:band]).max() if band > 0 else 0.0
    right_v = np.abs(v[-band:]).max() if band > 0 else 0.0
    return max(left_u, right_u, left_v, right_v)


def apply_arrays(u: np.ndarray, v: np.ndarray, spacing: float, count: int):
    """Array-level group step by `count` cells; returns the new (u, v) pair."""
    du = derivative1(u, spacing)
    cum = midpoint_cumulative(v, spacing)

    up, um = _shift(u, count), _shift(u, -count)
    cp, cm = _shift(cum, count), _shift(cum, -count)
    dp, dm = _shift(du, count), _shift(du, -count)
    vp, vm = _shift(v, count), _shift(v, -count)

    new_u = 0.5 * (up + um) + 0.5 * (cp - cm)
    new_v = 0.5 * (dp - dm) + 0.5 * (vp + vm)
    return new_u, new_v


def apply_group(z: State, t: float, *, strict: bool = True) -> State:
    """Evolve a position/velocity pair by the free wave flow for a lattice time.

    With `strict` the state must be quiescent (constant position, zero
    velocity) on edge bands wide enough for the shifts, so the result is exact
    on the whole lattice; pass strict=False when only a central region
    shielded by finite propagation speed is of interest.
    """
    dx = z.spacing
    step = GroupStep.from_time(t, dx)
    j = step.shift_count
    n = z.u.npoints
    if abs(j) >= n - 2:
        raise InsufficientPadding(f"shift by {j} cells exceeds the {n}-point lattice")
    if strict:
        band = abs(j) + 2
        if 2 * band >= n:
            raise InsufficientPadding(f"shift by {j} cells leaves no interior on {n} points")
        scale = 1.0 + max(np.abs(z.u.values).max(), np.abs(z.v.values).max())
        defect = _padding_defect(z, band)
        if defect > 1e-9 * scale:
            raise InsufficientPadding(
                f"state is not quiescent within {band} cells of the lattice edge "
                f"(defect {defect:.3e})"
            )

    new_u, new_v = apply_arrays(z.u.values, z.v.values, dx, j)
    return State(z.u.with_values(new_u), z.v.with_values(new_v))


def generator(z: State) -> State:
    """Time derivative of the free flow: position rate v, velocity rate u_xx."""
    lap = derivative2(z.u.values, z.spacing)
    return State(z.u.with_values(z.v.values.copy()), z.v.with_values(lap))
