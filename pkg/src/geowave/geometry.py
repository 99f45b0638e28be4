"""Target-manifold geometry.

Unit circle in R^2 and unit sphere in R^3 with closed forms, plus a callback
slot for custom compact targets.  The central object is the radial reflection
through the manifold, a smooth involution of the tubular neighborhood whose
first and second derivatives generate both extensions of the second
fundamental form used by the dynamics.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import OutsideTubularNeighborhood, PointOffManifold, VectorNotTangent
from .function_spaces import smoothstep

__all__ = ["ManifoldModel", "DiffusionField"]

ON_MANIFOLD_TOL = 1e-8

# Radial profile shared by the involution blend, the perpendicular extension
# and the shipped diffusion fields: 1 for d <= 0.75, C^2 down to 0 at d = 0.9.
_BLEND_LO = 0.75
_BLEND_HI = 0.9


def _bump(dist: np.ndarray) -> np.ndarray:
    return 1.0 - smoothstep((np.asarray(dist, dtype=float) - _BLEND_LO) / (_BLEND_HI - _BLEND_LO))


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a * b).sum(axis=-1, keepdims=True)


def _norm(q: np.ndarray) -> np.ndarray:
    return np.sqrt((q * q).sum(axis=-1, keepdims=True))


@dataclass(frozen=True)
class ManifoldModel:
    """Compact target manifold embedded in R^n.

    kind is one of "circle", "sphere", "custom".  Custom targets supply
    nearest_point / tangent_project / sff callbacks (all vectorized over
    leading axes); spheres use closed forms throughout.
    """

    kind: str
    ambient_dim: int
    tubular_radius: float = 0.75
    nearest_cb: Optional[Callable] = None
    tangent_cb: Optional[Callable] = None
    sff_cb: Optional[Callable] = None

    # -- constructors ---------------------------------------------------------

    @classmethod
    def circle(cls, tubular_radius: float = 0.75) -> "ManifoldModel":
        return cls("circle", 2, tubular_radius)

    @classmethod
    def sphere(cls, tubular_radius: float = 0.75) -> "ManifoldModel":
        return cls("sphere", 3, tubular_radius)

    @classmethod
    def custom(
        cls,
        ambient_dim: int,
        nearest_point: Callable,
        tangent_project: Callable,
        sff: Callable,
        tubular_radius: float = 0.75,
    ) -> "ManifoldModel":
        return cls("custom", ambient_dim, tubular_radius, nearest_point, tangent_project, sff)

    @property
    def _round(self) -> bool:
        return self.kind in ("circle", "sphere")

    # -- pointwise primitives (vectorized over leading axes) -------------------

    def nearest_point(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if self._round:
            rho = _norm(q)
            return q / np.where(rho > 1e-300, rho, 1.0)
        return self.nearest_cb(q)

    def constraint_residual(self, q: np.ndarray) -> np.ndarray:
        """Distance to the manifold (unsigned)."""
        q = np.asarray(q, dtype=float)
        if self._round:
            return np.abs(_norm(q)[..., 0] - 1.0)
        return np.sqrt(((q - self.nearest_cb(q)) ** 2).sum(axis=-1))

    def tangent_project_at(self, p: np.ndarray, a: np.ndarray) -> np.ndarray:
        """Tangent projection at the nearest manifold point of p (no checks)."""
        if self._round:
            n_hat = self.nearest_point(p)
            return a - _dot(a, n_hat) * n_hat
        return self.tangent_cb(self.nearest_point(p), a)

    # -- checked operations -----------------------------------------------------

    def project_tangent(self, p: np.ndarray, a: np.ndarray) -> np.ndarray:
        """Orthogonal projection of a onto T_p M; p must lie on M."""
        p = np.asarray(p, dtype=float)
        a = np.asarray(a, dtype=float)
        res = self.constraint_residual(p)
        if np.any(res >= ON_MANIFOLD_TOL):
            raise PointOffManifold(f"constraint residual {float(np.max(res)):.3e} >= {ON_MANIFOLD_TOL}")
        return self.tangent_project_at(p, a)

    def second_fundamental_form(self, p: np.ndarray, xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
        """A_p(xi, eta) for p on M and tangent xi, eta (normal-valued)."""
        p = np.asarray(p, dtype=float)
        xi = np.asarray(xi, dtype=float)
        eta = np.asarray(eta, dtype=float)
        res = self.constraint_residual(p)
        if np.any(res >= ON_MANIFOLD_TOL):
            raise PointOffManifold(f"constraint residual {float(np.max(res)):.3e} >= {ON_MANIFOLD_TOL}")
        for name, vec in (("xi", xi), ("eta", eta)):
            defect = np.abs(_dot(vec, self.nearest_point(p)))[..., 0] if self._round else np.sqrt(
                ((vec - self.tangent_cb(self.nearest_point(p), vec)) ** 2).sum(axis=-1)
            )
            scale = 1.0 + np.sqrt((vec * vec).sum(axis=-1))
            if np.any(defect >= ON_MANIFOLD_TOL * scale):
                raise VectorNotTangent(f"{name} has a normal component beyond tolerance")
        return self._sff_raw(self.nearest_point(p), xi, eta)

    def _sff_raw(self, p: np.ndarray, xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
        if self._round:
            return -_dot(xi, eta) * p
        return self.sff_cb(p, xi, eta)

    # -- involution -------------------------------------------------------------

    def involution(self, q: np.ndarray) -> np.ndarray:
        """Reflection through M, blended to the identity far away.

        For round targets: q |-> (2 - |q|) q/|q| on the shell 0.25 <= |q| <= 1.75,
        glued to the identity by the radial C^2 profile.
        """
        q = np.asarray(q, dtype=float)
        if self._round:
            rho = _norm(q)
            safe = np.where(rho > 1e-300, rho, 1.0)
            refl = (2.0 - rho) * q / safe
        else:
            refl = 2.0 * self.nearest_cb(q) - q
        psi = _bump(self.constraint_residual(q))[..., None]
        return q + psi * (refl - q)

    def involution_jacobian(self, q: np.ndarray, a: np.ndarray) -> np.ndarray:
        """Derivative of the involution at q applied to a; q must be inside the tube."""
        q = np.asarray(q, dtype=float)
        res = self.constraint_residual(q)
        if np.any(res >= self.tubular_radius):
            raise OutsideTubularNeighborhood(
                f"distance {float(np.max(res)):.3e} >= tubular radius {self.tubular_radius}"
            )
        return self._jacobian_raw(q, np.asarray(a, dtype=float))

    def _jacobian_raw(self, q: np.ndarray, a: np.ndarray) -> np.ndarray:
        if self._round:
            rho = _norm(q)
            safe = np.where(rho > 1e-300, rho, 1.0)
            q_hat = q / safe
            alpha = _dot(q_hat, a)
            jac0 = (2.0 / safe - 1.0) * a - (2.0 / safe) * alpha * q_hat
            d = np.abs(rho - 1.0)
            psi = _bump(d[..., 0])[..., None]
            dpsi = _bump_derivative(d[..., 0])[..., None] * np.sign(rho - 1.0)
            refl = (2.0 - rho) * q_hat
            return a + dpsi * alpha * (refl - q) + psi * (jac0 - a)
        # custom targets: centered difference of the blended involution
        delta = 1e-6
        amp = np.sqrt((a * a).sum(axis=-1, keepdims=True))
        unit = a / np.where(amp > 0, amp, 1.0)
        out = (self.involution(q + delta * unit) - self.involution(q - delta * unit)) / (2.0 * delta)
        return out * amp

    def involution_hessian(self, q: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Bilinear second derivative of the involution at q in directions (a, b)."""
        q = np.asarray(q, dtype=float)
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        na = np.sqrt((a * a).sum(axis=-1, keepdims=True))
        nb = np.sqrt((b * b).sum(axis=-1, keepdims=True))
        if self._round:
            d = self.constraint_residual(q)
            if np.all(d <= _BLEND_LO - 0.01):
                # pure radial shell: closed form
                rho = _norm(q)
                q_hat = q / rho
                alpha = _dot(q_hat, a)
                beta = _dot(q_hat, b)
                ab = _dot(a, b)
                return -(2.0 / rho ** 2) * (beta * a + alpha * b + (ab - 3.0 * alpha * beta) * q_hat)
        # blend zone or custom target: central second differences, step 1e-4
        ua = a / np.where(na > 0, na, 1.0)
        ub = b / np.where(nb > 0, nb, 1.0)
        h = 1e-4
        mixed = (
            self.involution(q + h * ua + h * ub)
            - self.involution(q + h * ua - h * ub)
            - self.involution(q - h * ua + h * ub)
            + self.involution(q - h * ua - h * ub)
        ) / (4.0 * h * h)
        return mixed * na * nb

    # -- extensions of the second fundamental form --------------------------------

    def extended_sff_A(self, q: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Involution-based extension: half the reflected Hessian at the mirror point."""
        q = np.asarray(q, dtype=float)
        ja = self._jacobian_raw(q, np.asarray(a, dtype=float))
        jb = self._jacobian_raw(q, np.asarray(b, dtype=float))
        return 0.5 * self.involution_hessian(self.involution(q), ja, jb)

    def extended_sff_perp(self, q: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Perpendicular extension: A at the nearest point on tangent parts, bumped off M.

        Normal-valued along M, smooth and compactly supported in q; agrees with
        extended_sff_A on M for tangent arguments.
        """
        q = np.asarray(q, dtype=float)
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        p = self.nearest_point(q)
        pa = self.tangent_project_at(q, a)
        pb = self.tangent_project_at(q, b)
        psi = _bump(self.constraint_residual(q))[..., None]
        return psi * self._sff_raw(p, pa, pb)


def _bump_derivative(dist: np.ndarray) -> np.ndarray:
    """d/d(dist) of the radial profile (quintic ramp derivative)."""
    s = (np.asarray(dist, dtype=float) - _BLEND_LO) / (_BLEND_HI - _BLEND_LO)
    inside = (s > 0.0) & (s < 1.0)
    ds = np.where(inside, 30.0 * s * s * (s - 1.0) * (s - 1.0), 0.0)
    return -ds / (_BLEND_HI - _BLEND_LO)


# ---------------------------------------------------------------------------
# diffusion fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiffusionField:
    """State-dependent noise coefficient q -> Y(q), tangent along M.

    evaluator is vectorized over leading axes; the field vanishes for
    |q| >= cutoff_radius and satisfies |Y(q)| <= bound_constant * (1 + |q|).
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    cutoff_radius: float
    bound_constant: float

    def __call__(self, q: np.ndarray) -> np.ndarray:
        return self.evaluator(np.asarray(q, dtype=float))

    @classmethod
    def sphere_axis_rotation(cls) -> "DiffusionField":
        """Rotation field about the third axis on the unit sphere: Y(p) = e x p."""

        def evaluator(q: np.ndarray) -> np.ndarray:
            d = np.abs(np.sqrt((q * q).sum(axis=-1)) - 1.0)
            psi = _bump(d)[..., None]
            out = np.empty_like(q)
            out[..., 0] = -q[..., 1]
            out[..., 1] = q[..., 0]
            out[..., 2] = 0.0
            return psi * out

        return cls(evaluator, cutoff_radius=1.0 + _BLEND_HI, bound_constant=1.0)

    @classmethod
    def circle_rotation(cls) -> "DiffusionField":
        """Quarter-turn field on the unit circle: Y(p) = p rotated by 90 degrees."""

        def evaluator(q: np.ndarray) -> np.ndarray:
            d = np.abs(np.sqrt((q * q).sum(axis=-1)) - 1.0)
            psi = _bump(d)[..., None]
            out = np.empty_like(q)
            out[..., 0] = -q[..., 1]
            out[..., 1] = q[..., 0]
            return psi * out

        return cls(evaluator, cutoff_radius=1.0 + _BLEND_HI, bound_constant=1.0)

    @classmethod
    def for_manifold(cls, manifold: ManifoldModel) -> "DiffusionField":
        if manifold.kind == "circle":
            return cls.circle_rotation()
        if manifold.kind == "sphere":
            return cls.sphere_axis_rotation()
        raise ValueError("no default diffusion field for custom manifolds")

    @classmethod
    def zero(cls, ambient_dim: int) -> "DiffusionField":
        def evaluator(q: np.ndarray) -> np.ndarray:
            return np.zeros_like(np.asarray(q, dtype=float))

        return cls(evaluator, cutoff_radius=1.0, bound_constant=1.0)
