"""Rate-function evaluation and small-noise / weak-perturbation probes.

The rate of a target is half the squared control norm of the cheapest control
whose zero-noise trajectory reaches the target; it is computed variationally
over piecewise-constant controls with a penalty continuation.  The probe
routines measure the two convergence mechanisms behind the rate picture:
continuity of the zero-noise solution map under weakly-null control
perturbations, and linear-in-eps decay of the mean peak cone energy of the
noise-driven deviation from the controlled path.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AllZeroCounts,
    InsufficientTrials,
    OptimizerDiverged,
)
from .function_spaces import LightCone, State, derivative1, derivative2
from .geometry import DiffusionField, ManifoldModel
from .noise import NoiseBasis
from .solver import (
    Control,
    LocalizationParams,
    Trajectory,
    _cone_energy,
    _trapezoid_weights,
    _window_indices,
    _window_norm,
    solve_batch,
    solve_skeleton,
)
from .wave_group import GroupStep

__all__ = [
    "RateOptions",
    "RateResult",
    "ConvergenceReport",
    "control_norm",
    "rate_function",
    "statement1_probe",
    "statement2_probe",
    "tail_estimate",
]


def control_norm(h: Control) -> float:
    """Squared L2-in-time control norm, sum_m dt |coeffs_m|^2 (not halved)."""
    return h.squared_norm()


@dataclass(frozen=True)
class RateOptions:
    """Optimizer knobs for rate_function."""

    blocks: int = 8                      # temporal blocks of the control ansatz
    gap_tol: float = 1e-2                # accepted terminal distance
    lambdas: tuple = (1e1, 1e2, 1e3, 1e4)  # penalty continuation schedule
    fd_step: float = 1e-5                # forward-difference step
    max_iter: int = 8                    # inner iterations per penalty stage
    optimizer: str = "gn"                # "gn" | "gd" | "spsa"
    gd_step: float = 0.5                 # initial gradient-descent step
    spsa_dim_threshold: int = 500        # switch to SPSA above this many params
    spsa_seed: int = 0
    sections: int = 4                    # time sections matched for path targets


@dataclass
class RateResult:
    value: float
    argmin: Control
    terminal_gap: float
    iterations: int
    converged: bool
    metadata: dict = field(default_factory=dict)


@dataclass
class ConvergenceReport:
    """Aligned parameter/metric arrays from a convergence probe."""

    params: np.ndarray
    metrics: np.ndarray
    stderr: np.ndarray
    slope: float | None
    passed: bool
    extra: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# rate function
# ---------------------------------------------------------------------------

def _section_fields(u, v, spacing):
    """(u, Du, D2u, v, Dv) stacked along a new leading axis."""
    return np.stack(
        [u, derivative1(u, spacing), derivative2(u, spacing), v, derivative1(v, spacing)]
    )


def _expand_rows(coeffs: np.ndarray, steps: int, blocks: int) -> np.ndarray:
    """Repeat (blocks, dim) block coefficients into (steps, dim) step rows."""
    reps = steps // blocks
    return np.repeat(coeffs, reps, axis=0)


class _TerminalObjective:
    """Batched map from flat control parameters to cone-section residuals.

    Each evaluation runs a batch of zero-noise solves, one column per
    parameter vector, and samples the weighted difference to the target on a
    few cone sections; the squared residual norm equals the summed cone
    energies of the difference (doubled), so the penalty term is
    lam * |rho|^2.
    """

    def __init__(self, target, z0, cone, *, horizon, loc, manifold, basis, diffusion, opts):
        self.z0 = z0
        self.cone = cone
        self.horizon = horizon
        self.loc = loc
        self.manifold = manifold
        self.basis = basis
        self.diffusion = diffusion
        self.dx = z0.spacing
        self.steps = GroupStep.from_time(horizon, self.dx).shift_count
        self.dim = basis.dim
        self.blocks = opts.blocks
        if self.steps % self.blocks:
            raise ValueError(
                f"{self.blocks} control blocks do not divide {self.steps} steps"
            )
        self.nparams = self.blocks * self.dim
        self.solves = 0

        n = z0.u.npoints
        if isinstance(target, Trajectory):
            stride = max(1, self.steps // opts.sections)
            self.section_steps = sorted({*range(stride, self.steps, stride), self.steps})
            self.targets = {
                m: (target.states[m].u.values, target.states[m].v.values)
                for m in self.section_steps
            }
        else:
            self.section_steps = [self.steps]
            self.targets = {self.steps: (target.u.values, target.v.values)}
        self.weights = {}
        for m in self.section_steps:
            t = m * self.dx
            a, b = cone.interval(t)
            i_lo, i_hi = _window_indices(z0.origin - cone.center, self.dx, n, 0.5 * (b - a))
            self.weights[m] = _trapezoid_weights(i_lo, i_hi, n, self.dx)

    def residuals(self, params: np.ndarray) -> np.ndarray:
        """params (P, B) -> residual matrix (R, B); |col|^2 = sum 2*e_cone(diff)."""
        nbatch = params.shape[1]
        rates = np.empty((self.steps, nbatch, self.dim))
        for b in range(nbatch):
            rates[:, b, :] = _expand_rows(params[:, b].reshape(self.blocks, self.dim), self.steps, self.blocks)
        collected = {}

        def observer(m, t, u, v):
            if m in self.targets:
                collected[m] = (u.copy(), v.copy())

        solve_batch(
            self.z0, 0.0, self.horizon, self.loc,
            manifold=self.manifold, basis=self.basis, diffusion=self.diffusion,
            control_rates=rates, keep_states=False, observer=observer,
        )
        self.solves += nbatch
        rows = []
        for m in self.section_steps:
            u, v = collected[m]
            du = u - self.targets[m][0][:, None, :]
            dv = v - self.targets[m][1][:, None, :]
            w = self.weights[m]
            sw = np.sqrt(w)[:, None, None]
            for f in _section_fields(du, dv, self.dx):
                rows.append((sw * f).transpose(0, 2, 1).reshape(-1, nbatch))
        return np.concatenate(rows, axis=0)

    def gap(self, params: np.ndarray) -> float:
        """Largest cone-section distance for a single parameter vector."""
        return float(np.sqrt(self._section_sq(params).max()))

    def _section_sq(self, params: np.ndarray) -> np.ndarray:
        nbatch = 1
        rates = _expand_rows(params.reshape(self.blocks, self.dim), self.steps, self.blocks)[:, None, :]
        out = {}

        def observer(m, t, u, v):
            if m in self.targets:
                du = u - self.targets[m][0][:, None, :]
                dv = v - self.targets[m][1][:, None, :]
                out[m] = 2.0 * _cone_energy(du, dv, self.weights[m], self.dx)[0]

        solve_batch(
            self.z0, 0.0, self.horizon, self.loc,
            manifold=self.manifold, basis=self.basis, diffusion=self.diffusion,
            control_rates=rates, keep_states=False, observer=observer,
        )
        self.solves += nbatch
        return np.array([out[m] for m in self.section_steps])


def _is_reachable_target(target, manifold: ManifoldModel) -> bool:
    z = target.final_state() if isinstance(target, Trajectory) else target
    res = float(manifold.constraint_residual(z.u.values).max())
    if res > 1e-8:
        return False
    proj = manifold.tangent_project_at(manifold.nearest_point(z.u.values), z.v.values)
    defect = float(np.abs(z.v.values - proj).max())
    return defect <= 1e-8 * (1.0 + float(np.abs(z.v.values).max()))


def rate_function(
    target,
    z0: State,
    budget: float,
    opts: RateOptions | None = None,
    *,
    cone: LightCone,
    horizon: float,
    loc: LocalizationParams,
    manifold: ManifoldModel,
    basis: NoiseBasis,
    diffusion: DiffusionField,
) -> RateResult:
    """Half the squared norm of the cheapest control reaching the target.

    Minimizes 0.5*control_norm(h) + lam*gap(h)^2 over piecewise-constant
    controls, continuing lam upward until the terminal gap passes opts.gap_tol;
    returns the +inf sentinel (converged=False) for unreachable targets or
    when every control within the budget misses the tolerance.
    """
    if budget <= 0:
        raise ValueError(f"budget must be positive, got {budget}")
    opts = opts or RateOptions()
    obj = _TerminalObjective(
        target, z0, cone, horizon=horizon, loc=loc,
        manifold=manifold, basis=basis, diffusion=diffusion, opts=opts,
    )
    dt_block = obj.dx * (obj.steps // opts.blocks)

    if not _is_reachable_target(target, manifold):
        zero = Control.zeros(obj.steps, obj.dim, obj.dx)
        return RateResult(math.inf, zero, math.inf, 0, False, {"reason": "off-manifold target"})

    P = obj.nparams
    q_diag = np.full(P, dt_block)  # 0.5*control_norm = 0.5 * theta^T diag(dt_block) theta
    theta = np.zeros(P)
    optimizer = opts.optimizer
    if optimizer == "gn" and P > opts.spsa_dim_threshold:
        optimizer = "spsa"

    iterations = 0
    rng = np.random.default_rng(opts.spsa_seed)

    def total_objective(th, lam):
        sq = obj._section_sq(th)
        return 0.5 * float(q_diag @ (th * th)) + lam * float(sq.sum()), float(np.sqrt(sq.max()))

    gap = obj.gap(theta)
    try:
        for lam in opts.lambdas:
            for _ in range(opts.max_iter):
                if gap <= opts.gap_tol:
                    break
                iterations += 1
                if optimizer == "gn":
                    base = obj.residuals(theta[:, None])[:, 0]
                    probes = np.tile(theta[:, None], (1, P))
                    probes[np.arange(P), np.arange(P)] += opts.fd_step
                    jac = (obj.residuals(probes) - base[:, None]) / opts.fd_step
                    grad = q_diag * theta + 2.0 * lam * (jac.T @ base)
                    hess = np.diag(q_diag) + 2.0 * lam * (jac.T @ jac)
                    hess[np.diag_indices_from(hess)] += 1e-12 * (1.0 + np.trace(hess) / P)
                    step = np.linalg.solve(hess, grad)
                    if not np.all(np.isfinite(step)):
                        raise OptimizerDiverged("non-finite step in the normal equations")
                    theta = theta - step
                elif optimizer == "gd":
                    base = obj.residuals(theta[:, None])[:, 0]
                    probes = np.tile(theta[:, None], (1, P))
                    probes[np.arange(P), np.arange(P)] += opts.fd_step
                    jac = (obj.residuals(probes) - base[:, None]) / opts.fd_step
                    grad = q_diag * theta + 2.0 * lam * (jac.T @ base)
                    phi0, _ = total_objective(theta, lam)
                    step = opts.gd_step / (1.0 + lam)
                    for _ in range(20):
                        cand = theta - step * grad
                        phi, _ = total_objective(cand, lam)
                        if phi < phi0:
                            theta = cand
                            break
                        step *= 0.5
                elif optimizer == "spsa":
                    delta = rng.choice([-1.0, 1.0], size=P)
                    c = 10 * opts.fd_step
                    plus, _ = total_objective(theta + c * delta, lam)
                    minus, _ = total_objective(theta - c * delta, lam)
                    ghat = (plus - minus) / (2.0 * c) * delta
                    step = opts.gd_step / ((1.0 + iterations) * (1.0 + lam))
                    theta = theta - step * ghat
                else:
                    raise ValueError(f"unknown optimizer {opts.optimizer!r}")
                if not np.all(np.isfinite(theta)):
                    raise OptimizerDiverged("control parameters became non-finite")
                gap = obj.gap(theta)
            if gap <= opts.gap_tol and float(0.5 * q_diag @ (theta * theta)) > budget:
                break  # feasible but over budget: larger lam only raises the cost
    except np.linalg.LinAlgError as err:
        raise OptimizerDiverged(f"normal equations unsolvable: {err}") from None

    rows = _expand_rows(theta.reshape(opts.blocks, obj.dim), obj.steps, opts.blocks)
    h = Control(rows, obj.dx)
    value = 0.5 * control_norm(h)
    # certificate: re-simulate the returned control and measure the gap afresh
    terminal_gap = obj.gap(theta)
    converged = terminal_gap <= opts.gap_tol and value <= budget
    if not converged:
        value = math.inf
    return RateResult(
        value, h, terminal_gap, iterations, converged,
        {"solves": obj.solves, "optimizer": optimizer, "blocks": opts.blocks},
    )


# ---------------------------------------------------------------------------
# convergence probes
# ---------------------------------------------------------------------------

def _fit_slope(x: np.ndarray, y: np.ndarray) -> float | None:
    good = (np.asarray(x) > 0) & (np.asarray(y) > 0)
    if good.sum() < 3:
        return None
    return float(np.polyfit(np.log(np.asarray(x)[good]), np.log(np.asarray(y)[good]), 1)[0])


def _zero_control(steps: int, dim: int, dx: float) -> Control:
    return Control.zeros(steps, dim, dx)


def statement1_probe(
    h: Control | None,
    n_list,
    z0: State,
    cone: LightCone,
    *,
    horizon: float,
    loc: LocalizationParams,
    manifold: ManifoldModel,
    basis: NoiseBasis,
    diffusion: DiffusionField,
    amplitude: float = 0.3,
    mode_index: int = 0,
    tol: float = 1e-2,
    perturbation: str = "oscillation",
) -> ConvergenceReport:
    """Continuity of the zero-noise solution map under weak-null perturbations.

    Perturbs the control by amplitude*sin(2*pi*n*t/T) on one noise mode (a
    family converging to zero weakly but not strongly) and records
    d_n = sup_{t<=T} of the product Sobolev distance between the perturbed and
    base trajectories on the fixed ball of the supplied cone.  The "constant"
    perturbation (same energy, no oscillation) is the negative control: it
    must not decay.
    """
    dx = z0.spacing
    steps = GroupStep.from_time(horizon, dx).shift_count
    dim = basis.dim
    base = h.coeffs if h is not None else np.zeros((steps, dim))
    if base.shape[0] != steps:
        base = _expand_rows(base, steps, base.shape[0])
    n_list = list(n_list)
    nbatch = len(n_list)

    t_mid = (np.arange(steps) + 0.5) * dx
    rates = np.tile(base[:, None, :], (1, nbatch, 1))
    for col, n in enumerate(n_list):
        if perturbation == "oscillation":
            bump = amplitude * np.sin(2.0 * math.pi * n * t_mid / horizon)
        elif perturbation == "constant":
            bump = amplitude * np.ones(steps)
        else:
            raise ValueError(f"unknown perturbation {perturbation!r}")
        rates[:, col, mode_index] += bump

    base_traj = solve_skeleton(
        z0, Control(base, dx) if np.any(base) else None, horizon, loc,
        manifold=manifold, basis=basis, diffusion=diffusion, keep_states=True,
    )
    n_pts = z0.u.npoints
    i_lo, i_hi = _window_indices(z0.origin - cone.center, dx, n_pts, cone.horizon)
    wball = _trapezoid_weights(i_lo, i_hi, n_pts, dx)
    sup_d = np.zeros(nbatch)

    def observer(m, t, u, v):
        du = u - base_traj.states[m].u.values[:, None, :]
        dv = v - base_traj.states[m].v.values[:, None, :]
        np.maximum(sup_d, _window_norm(du, dv, wball, dx), out=sup_d)

    solve_batch(
        z0, 0.0, horizon, loc,
        manifold=manifold, basis=basis, diffusion=diffusion,
        control_rates=rates, keep_states=False, observer=observer,
    )
    decreasing = all(sup_d[i + 1] <= 1.05 * sup_d[i] for i in range(nbatch - 1))
    passed = decreasing and sup_d[-1] < tol
    return ConvergenceReport(
        params=np.asarray(n_list, dtype=float),
        metrics=sup_d,
        stderr=np.zeros(nbatch),
        slope=_fit_slope(np.asarray(n_list, dtype=float), sup_d),
        passed=passed,
        extra={"tol": tol, "amplitude": amplitude, "perturbation": perturbation},
    )


def _chunks(ids: list, nthreads: int) -> list:
    size = (len(ids) + nthreads - 1) // nthreads
    return [ids[i:i + size] for i in range(0, len(ids), size)]


def statement2_probe(
    eps_list,
    h: Control | None,
    trials: int,
    threshold: float,
    z0: State,
    cone: LightCone,
    master_seed: int,
    *,
    horizon: float,
    loc: LocalizationParams,
    manifold: ManifoldModel,
    basis: NoiseBasis,
    diffusion: DiffusionField,
    threads: int = 1,
) -> ConvergenceReport:
    """Mean peak cone energy of the noise-driven deviation, per noise level.

    For each eps, runs `trials` noisy paths against the controlled zero-noise
    path, tracking sup_{t<=T/2} of the cone energy of the difference frozen at
    the first time the noisy path's own cone norm reaches the threshold; fits
    the log-log slope of the means (linear response means slope near 1).
    """
    if trials < 30:
        raise InsufficientTrials(f"need at least 30 trials, got {trials}")
    eps_list = list(eps_list)
    dx = z0.spacing
    t_half = 0.5 * horizon
    steps_half = GroupStep.from_time(t_half, dx).shift_count
    base_traj = solve_skeleton(
        z0, h, t_half, loc,
        manifold=manifold, basis=basis, diffusion=diffusion, keep_states=True,
    )
    n_pts = z0.u.npoints
    cw = {}
    for m in range(steps_half + 1):
        t = m * dx
        a, b = cone.interval(t)
        i_lo, i_hi = _window_indices(z0.origin - cone.center, dx, n_pts, 0.5 * (b - a))
        cw[m] = _trapezoid_weights(i_lo, i_hi, n_pts, dx)

    means = np.zeros(len(eps_list))
    errs = np.zeros(len(eps_list))
    tau_fraction = np.zeros(len(eps_list))
    per_trial = {}
    for i, eps in enumerate(eps_list):
        sup_e = np.full(trials, 0.0)
        hit = np.zeros(trials, dtype=bool)

        def run_chunk(ids):
            local_sup = np.zeros(len(ids))
            local_hit = np.zeros(len(ids), dtype=bool)

            def observer(m, t, u, v):
                zb = base_traj.states[m]
                du = u - zb.u.values[:, None, :]
                dv = v - zb.v.values[:, None, :]
                e_diff = _cone_energy(du, dv, cw[m], dx)
                e_self = _cone_energy(u, v, cw[m], dx)
                live = ~local_hit
                np.maximum(local_sup, np.where(live, e_diff, -np.inf), out=local_sup)
                np.logical_or(local_hit, np.sqrt(2.0 * e_self) >= threshold, out=local_hit)

            solve_batch(
                z0, eps, t_half, loc, manifold=manifold, basis=basis,
                diffusion=diffusion, control=h, master_seed=master_seed,
                trial_ids=ids, keep_states=False, observer=observer,
            )
            return local_sup, local_hit

        ids = list(range(trials))
        if threads > 1:
            from concurrent.futures import ThreadPoolExecutor

            groups = _chunks(ids, threads)
            with ThreadPoolExecutor(max_workers=threads) as pool:
                for grp, (ls, lh) in zip(groups, pool.map(run_chunk, groups)):
                    sup_e[grp] = ls
                    hit[grp] = lh
        else:
            ls, lh = run_chunk(ids)
            sup_e[:] = ls
            hit[:] = lh

        per_trial[eps] = sup_e.copy()
        means[i] = float(sup_e.mean())
        errs[i] = float(sup_e.std(ddof=1) / math.sqrt(trials))
        tau_fraction[i] = float(hit.mean())

    slope = _fit_slope(np.asarray(eps_list), means)
    decreasing = all(means[i + 1] < means[i] for i in range(len(means) - 1))
    passed = slope is not None and 0.7 <= slope <= 1.3 and decreasing
    return ConvergenceReport(
        params=np.asarray(eps_list, dtype=float),
        metrics=means,
        stderr=errs,
        slope=slope,
        passed=passed,
        extra={"tau_fraction": tau_fraction, "threshold": threshold,
               "trials": trials, "per_trial": per_trial},
    )


def tail_estimate(
    delta: float,
    eps_list,
    trials: int,
    z0: State,
    cone: LightCone,
    master_seed: int,
    *,
    horizon: float,
    loc: LocalizationParams,
    manifold: ManifoldModel,
    basis: NoiseBasis,
    diffusion: DiffusionField,
    rate_value: float | None = None,
    threads: int = 1,
) -> ConvergenceReport:
    """Monte Carlo exceedance probabilities of the sup-cone deviation.

    P-hat(eps) is the fraction of noisy paths whose sup-over-time cone distance
    from the uncontrolled zero-noise path exceeds delta; the eps*log(P-hat)
    sequence is the finite-noise analogue of the exponential decay rate, with
    the optional rate_value supplying the comparison level.
    """
    if delta < 0:
        raise ValueError(f"event radius must be nonnegative, got {delta}")
    eps_list = list(eps_list)
    dx = z0.spacing
    steps = GroupStep.from_time(horizon, dx).shift_count
    base_traj = solve_skeleton(
        z0, None, horizon, loc,
        manifold=manifold, basis=basis, diffusion=diffusion, keep_states=True,
    )
    n_pts = z0.u.npoints
    cw = {}
    for m in range(steps + 1):
        t = m * dx
        a, b = cone.interval(t)
        i_lo, i_hi = _window_indices(z0.origin - cone.center, dx, n_pts, 0.5 * (b - a))
        cw[m] = _trapezoid_weights(i_lo, i_hi, n_pts, dx)

    p_hat = np.zeros(len(eps_list))
    errs = np.zeros(len(eps_list))
    eps_log_p = np.zeros(len(eps_list))
    for i, eps in enumerate(eps_list):
        sup_d = np.zeros(trials)

        def run_chunk(ids):
            local = np.zeros(len(ids))

            def observer(m, t, u, v):
                zb = base_traj.states[m]
                du = u - zb.u.values[:, None, :]
                dv = v - zb.v.values[:, None, :]
                np.maximum(local, np.sqrt(2.0 * _cone_energy(du, dv, cw[m], dx)), out=local)

            solve_batch(
                z0, eps, horizon, loc, manifold=manifold, basis=basis,
                diffusion=diffusion, master_seed=master_seed, trial_ids=ids,
                keep_states=False, observer=observer,
            )
            return local

        ids = list(range(trials))
        if threads > 1:
            from concurrent.futures import ThreadPoolExecutor

            groups = _chunks(ids, threads)
            with ThreadPoolExecutor(max_workers=threads) as pool:
                for grp, local in zip(groups, pool.map(run_chunk, groups)):
                    sup_d[grp] = local
        else:
            sup_d[:] = run_chunk(ids)

        count = int((sup_d > delta).sum())
        p = count / trials
        p_hat[i] = p
        errs[i] = math.sqrt(p * (1.0 - p) / trials)
        eps_log_p[i] = eps * math.log(p) if p > 0 else math.nan

    if not np.any(p_hat > 0):
        raise AllZeroCounts(
            f"no exceedances of delta={delta} at any noise level; shrink delta or raise eps"
        )
    if p_hat[int(np.argmax(eps_list))] == 0.0:
        warnings.warn(
            f"zero exceedance count at the largest noise level {max(eps_list)}; "
            "the tail table is unreliable there",
            stacklevel=2,
        )
    extra = {"delta": delta, "eps_log_p": eps_log_p, "trials": trials}
    if rate_value is not None:
        finite = [elp for elp in eps_log_p if not math.isnan(elp)]
        extra["gap_to_rate"] = float(finite[-1] + rate_value) if finite else math.nan
    return ConvergenceReport(
        params=np.asarray(eps_list, dtype=float),
        metrics=p_hat,
        stderr=errs,
        slope=_fit_slope(np.asarray(eps_list), p_hat),
        passed=bool(np.any(p_hat > 0)),
        extra=extra,
    )
