"""Tests for lattice construction and the on-manifold initial-data factories."""
import math

import numpy as np
import pytest

from geowave.geometry import ManifoldModel
from geowave.states import (
    ROTATING_OMEGA,
    ROTATING_THETA0,
    bump_state,
    constant_state,
    make_grid,
    random_state,
    rotating_state,
    twin_pair,
)


def _on_manifold(state, man, tol=1e-12):
    return float(man.constraint_residual(state.u.values).max()) < tol


def _tangent(state, man, tol=1e-12):
    gap = state.v.values - man.tangent_project_at(state.u.values, state.v.values)
    return float(np.abs(gap).max()) < tol


def test_make_grid_frozen_default_scale():
    geom = make_grid(6.0, 1536, 1.0)
    assert geom.spacing == 0.00390625
    assert geom.half_width == 7.00390625
    assert geom.npoints == 3587
    assert geom.x[0] == -geom.half_width
    assert geom.x[-1] == geom.half_width


def test_make_grid_half_width_clears_the_horizon():
    for points in (64, 100, 192, 1536):
        for horizon in (0.5, 1.0, 2.0):
            geom = make_grid(6.0, points, horizon)
            assert geom.half_width > 6.0 + horizon
            assert geom.half_width - (6.0 + horizon) <= 2 * geom.spacing
            # half width is itself a lattice point
            assert abs(geom.half_width / geom.spacing - round(geom.half_width / geom.spacing)) < 1e-9


def test_make_grid_rejections():
    with pytest.raises(ValueError):
        make_grid(6.0, 3, 1.0)
    with pytest.raises(ValueError):
        make_grid(6.0, 64, 0.0)
    with pytest.raises(ValueError):
        make_grid(-1.0, 64, 1.0)


def test_constant_state_sits_at_point():
    geom = make_grid(6.0, 64, 1.0)
    man = ManifoldModel.sphere()
    z = constant_state(geom, man)
    assert np.array_equal(z.u.values, np.tile([1.0, 0.0, 0.0], (geom.npoints, 1)))
    assert np.abs(z.v.values).max() == 0.0
    z2 = constant_state(geom, man, point=[0.0, 0.0, 1.0])
    assert np.array_equal(z2.u.values[17], [0.0, 0.0, 1.0])


def test_rotating_state_frozen_values():
    geom = make_grid(6.0, 64, 1.0)
    z = rotating_state(geom, ManifoldModel.circle())
    assert np.abs(z.u.values[:, 0] - math.cos(ROTATING_THETA0)).max() < 1e-15
    assert np.abs(z.u.values[:, 1] - math.sin(ROTATING_THETA0)).max() < 1e-15
    assert np.abs(z.v.values[:, 0] + ROTATING_OMEGA * math.sin(ROTATING_THETA0)).max() < 1e-15
    assert np.abs(z.v.values[:, 1] - ROTATING_OMEGA * math.cos(ROTATING_THETA0)).max() < 1e-15
    zs = rotating_state(geom, ManifoldModel.sphere(), theta0=0.0, omega=2.0)
    assert np.array_equal(zs.u.values[0], [1.0, 0.0, 0.0])
    assert np.abs(zs.v.values[:, 1] - 2.0).max() < 1e-15


def test_factories_stay_on_manifold_and_tangent():
    rng = np.random.default_rng(7)
    geom = make_grid(6.0, 128, 1.0)
    for man in (ManifoldModel.circle(), ManifoldModel.sphere()):
        for z in (
            constant_state(geom, man),
            rotating_state(geom, man),
            bump_state(geom, man),
            random_state(geom, man, rng),
        ):
            assert _on_manifold(z, man)
            assert _tangent(z, man)


def test_bump_state_is_quiescent_near_edges():
    geom = make_grid(6.0, 128, 1.0)
    man = ManifoldModel.circle()
    z = bump_state(geom, man, base_angle=0.4)
    edge = np.abs(geom.x) > 4.0
    base = [math.cos(0.4), math.sin(0.4)]
    assert np.abs(z.u.values[edge] - base).max() == 0.0
    assert np.abs(z.v.values[edge]).max() == 0.0
    # and the excursion really moved the middle
    assert np.abs(z.u.values[:, 0] - base[0]).max() > 0.1


def test_random_state_is_reproducible():
    geom = make_grid(6.0, 96, 1.0)
    man = ManifoldModel.sphere()
    a = random_state(geom, man, np.random.default_rng(42))
    b = random_state(geom, man, np.random.default_rng(42))
    c = random_state(geom, man, np.random.default_rng(43))
    assert np.array_equal(a.u.values, b.u.values)
    assert np.array_equal(a.v.values, b.v.values)
    assert not np.array_equal(a.u.values, c.u.values)


def test_twin_pair_agrees_on_ball_and_differs_outside():
    geom = make_grid(6.0, 384, 1.0)
    man = ManifoldModel.circle()
    for seed in range(4):
        base, twin = twin_pair(geom, man, np.random.default_rng(seed), ball_radius=2.0, margin=0.25)
        inside = np.abs(geom.x) <= 2.25
        assert np.array_equal(base.u.values[inside], twin.u.values[inside])
        assert np.array_equal(base.v.values[inside], twin.v.values[inside])
        assert np.abs(base.u.values - twin.u.values).max() > 1e-2
        assert _on_manifold(twin, man)
        assert _tangent(twin, man, tol=1e-10)
