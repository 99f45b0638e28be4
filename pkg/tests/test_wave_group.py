"""Tests for the exact lattice realization of the free wave flow."""
import numpy as np
import pytest

from geowave.errors import InsufficientPadding, NonLatticeTime
from geowave.function_spaces import GridFunction, State, derivative1
from geowave.wave_group import (
    GroupStep,
    apply_arrays,
    apply_group,
    generator,
    midpoint_cumulative,
)

_DX = 1.0 / 64.0


def _lattice(npoints=513):
    return -4.0 + _DX * np.arange(npoints)


def _windowed_state(rng, ncomp=1):
    """Random smooth state supported in |x| <= 2 on the [-4, 4] lattice.

    The wide quiescent margin keeps every shift in these tests strict-safe.
    """
    x = _lattice()
    window = np.where(np.abs(x) < 2.0, np.cos(np.pi * x / 4.0) ** 2, 0.0)
    u = np.zeros((len(x), ncomp))
    v = np.zeros((len(x), ncomp))
    for c in range(ncomp):
        for k in range(1, 4):
            u[:, c] += rng.normal() * np.sin(k * x) + rng.normal() * np.cos(k * x)
            v[:, c] += rng.normal() * np.sin(k * x + 0.5)
        u[:, c] *= window
        v[:, c] *= window
    uf = GridFunction(-4.0, _DX, u)
    return State(uf, uf.with_values(v))


def _state_gap(a, b):
    return max(
        float(np.abs(a.u.values - b.u.values).max()),
        float(np.abs(a.v.values - b.v.values).max()),
    )


def _free_energy(z):
    du = np.gradient(z.u.values, z.spacing, axis=0)
    return float((du ** 2 + z.v.values ** 2).sum() * z.spacing)


def test_group_step_from_time():
    step = GroupStep.from_time(0.75, _DX)
    assert step.shift_count == 48
    assert step.time == 0.75
    assert GroupStep.from_time(-0.5, _DX).shift_count == -32
    assert GroupStep.from_time(0.0, _DX).shift_count == 0


def test_group_step_rejects_non_lattice_time():
    with pytest.raises(NonLatticeTime):
        GroupStep.from_time(0.7501, _DX)


def test_midpoint_cumulative_inverts_central_difference():
    rng = np.random.default_rng(3)
    for _ in range(5):
        v = rng.normal(size=201)
        cum = midpoint_cumulative(v, _DX)
        central = (cum[2:] - cum[:-2]) / (2.0 * _DX)
        assert np.abs(central - v[1:-1]).max() < 1e-12
    assert cum[0] == 0.0


def test_group_law():
    rng = np.random.default_rng(11)
    for _ in range(4):
        z = _windowed_state(rng, ncomp=2)
        once = apply_group(apply_group(z, 0.25), 0.5)
        whole = apply_group(z, 0.75)
        assert _state_gap(once, whole) < 1e-12


def test_time_reversibility():
    rng = np.random.default_rng(12)
    for _ in range(4):
        z = _windowed_state(rng)
        back = apply_group(apply_group(z, 0.5), -0.5)
        assert _state_gap(back, z) < 1e-12


def test_free_energy_conserved():
    rng = np.random.default_rng(13)
    for _ in range(4):
        z = _windowed_state(rng)
        e0 = _free_energy(z)
        for t in (0.25, 0.5, 1.0):
            assert abs(_free_energy(apply_group(z, t)) - e0) / e0 < 1e-10


def test_finite_speed_exactly_zero_outside_cone():
    x = _lattice()
    u = np.where(np.abs(x) < 1.0, np.cos(np.pi * x / 2.0) ** 2, 0.0)
    uf = GridFunction(-4.0, _DX, u)
    z = State(uf, uf.with_values(np.zeros_like(u)))
    moved = apply_group(z, 0.5)
    outside = np.abs(x) > 1.5 + _DX / 2.0
    assert np.abs(moved.u.values[outside]).max() == 0.0
    assert np.abs(moved.v.values[outside]).max() == 0.0
    # something did propagate into the annulus 1 < |x| < 1.5
    ring = (np.abs(x) > 1.0 + _DX) & (np.abs(x) < 1.5 - _DX)
    assert np.abs(moved.u.values[ring]).max() > 1e-3


def test_right_mover_is_a_pure_shift():
    # with v = -D1 u the d'Alembert combination collapses to u(x - t)
    x = _lattice()
    u = np.where(np.abs(x) < 1.5, np.exp(-1.0 / np.maximum(1.0 - (x / 1.5) ** 2, 1e-12)), 0.0)
    v = -derivative1(u[:, None], _DX)
    uf = GridFunction(-4.0, _DX, u)
    z = State(uf, uf.with_values(v))
    j = 32  # t = 0.5
    moved = apply_group(z, 0.5)
    assert np.abs(moved.u.values[j:, 0] - u[:-j]).max() < 1e-12
    assert np.abs(moved.v.values[j:] - v[:-j]).max() < 1e-12


def test_apply_arrays_matches_apply_group():
    rng = np.random.default_rng(14)
    z = _windowed_state(rng, ncomp=3)
    nu, nv = apply_arrays(z.u.values, z.v.values, _DX, 16)
    moved = apply_group(z, 16 * _DX)
    assert np.array_equal(nu, moved.u.values)
    assert np.array_equal(nv, moved.v.values)


def test_generator_returns_rates():
    x = _lattice(129)
    u = 1.0 + 0.5 * x + 0.25 * x ** 2  # exact discrete second derivative 0.5
    v = np.sin(x)
    uf = GridFunction(-4.0, _DX, u)
    z = State(uf, uf.with_values(v))
    g = generator(z)
    assert np.array_equal(g.u.values[:, 0], v)
    assert np.abs(g.v.values[1:-1, 0] - 0.5).max() < 1e-9


def test_strict_mode_rejects_busy_edges():
    x = _lattice()
    uf = GridFunction(-4.0, _DX, np.sin(x))
    z = State(uf, uf.with_values(np.zeros_like(x)))
    with pytest.raises(InsufficientPadding):
        apply_group(z, 0.5)
    # the same state passes when only the shielded interior matters
    apply_group(z, 0.5, strict=False)


def test_oversized_shift_raises():
    rng = np.random.default_rng(15)
    z = _windowed_state(rng)
    with pytest.raises(InsufficientPadding):
        apply_group(z, 9.0)
