"""Damped Newton corrector and adaptive homotopy continuation in tau.

The family scales the data (psi, phi) by tau in [0, 1]; u = 0 solves the
tau = 0 problem, and positive gravity makes the linearization definite along
the path, so plain Newton with residual-norm backtracking is an adequate
corrector.  The continuation driver halves the step on corrector failure and
doubles it after three consecutive easy steps.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from .assembly import jacobian, residual
from .meshing import ScalarField
from .problem import height_bound, validate_conditions

__all__ = [
    "SolverError",
    "SingularJacobian",
    "LineSearchFailed",
    "MaxIterationsExceeded",
    "ContinuationStalled",
    "NewtonReport",
    "ContinuationConfig",
    "ContinuationStep",
    "ContinuationState",
    "newton_solve",
    "continuation_solve",
    "uniqueness_probe",
]

log = logging.getLogger("capgraph.solver")

_ARMIJO = 1e-4
_MAX_HALVINGS = 30
_LINEAR_RTOL = 1e-12


class SolverError(RuntimeError):
    """Base solver failure; carries the last iterate for diagnosis."""

    def __init__(self, message, iterate=None):
        super().__init__(message)
        self.iterate = iterate


class SingularJacobian(SolverError):
    pass


class LineSearchFailed(SolverError):
    pass


class MaxIterationsExceeded(SolverError):
    pass


class ContinuationStalled(SolverError):
    def __init__(self, message, tau, iterate):
        super().__init__(message, iterate)
        self.tau = tau


@dataclass
class NewtonReport:
    iterations: int
    residual_norm: float
    damping_factors: list
    converged: bool
    residual_history: list


@dataclass
class ContinuationConfig:
    tol: float = 1e-10
    max_newton: int = 50
    dtau: float = 0.1
    dtau_min: float = 1e-4
    dtau_max: float = 0.25
    easy_streak: int = 3          # consecutive successes before doubling dtau


@dataclass
class ContinuationStep:
    tau: float
    newton_iterations: int
    residual_norm: float
    dtau: float


@dataclass
class ContinuationState:
    tau: float
    u: ScalarField
    dtau: float
    history: list = field(default_factory=list)
    status: str = "advancing"


def _linear_solve(mat, rhs, iterate):
    with warnings.catch_warnings():
        warnings.simplefilter("error", MatrixRankWarning)
        try:
            delta = spsolve(mat.tocsc(), rhs)
        except (MatrixRankWarning, RuntimeError) as exc:
            raise SingularJacobian(f"linear solve broke down: {exc}",
                                   iterate=iterate) from exc
    if not np.all(np.isfinite(delta)):
        raise SingularJacobian("linear solve produced non-finite values",
                               iterate=iterate)
    # normwise backward error (the achievable relative measure for a direct
    # solve) plus a loose forward gate: a singular factorization can return a
    # huge null-space-polluted delta whose backward error still looks tiny
    rhs_norm = np.linalg.norm(rhs, np.inf)

    def errors(d):
        backward = (np.linalg.norm(mat @ d - rhs, np.inf)
                    / (abs(mat).sum(axis=1).max() * np.linalg.norm(d, np.inf)
                       + rhs_norm))
        forward = (np.linalg.norm(mat @ d - rhs, np.inf) / rhs_norm
                   if rhs_norm > 0 else 0.0)
        return backward, forward

    backward, forward = errors(delta)
    if backward > _LINEAR_RTOL or forward > 1e-6:
        # one round of iterative refinement before declaring breakdown
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", MatrixRankWarning)
            correction = spsolve(mat.tocsc(), rhs - mat @ delta)
        if np.all(np.isfinite(correction)):
            delta = delta + correction
            backward, forward = errors(delta)
    if backward > _LINEAR_RTOL or forward > 1e-6:
        raise SingularJacobian(
            f"linear solve breakdown (backward error {backward:.2e}, "
            f"relative residual {forward:.2e})", iterate=iterate)
    return delta


def newton_solve(u0, tau, problem, metric, mesh, tol=1e-10, max_iter=50):
    """Damped Newton on the weak residual; returns (solution, NewtonReport).

    Accepted steps strictly decrease the residual max-norm (Armijo with halving,
    at most 30 halvings per step).  Failures raise `SingularJacobian`,
    `LineSearchFailed` or `MaxIterationsExceeded`, each carrying the iterate.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    u = _as_field(u0, mesh).values.copy()
    if not np.all(np.isfinite(u)):
        raise ValueError("initial iterate must be finite")
    r = residual(u, tau, problem, metric, mesh)
    rnorm = float(np.max(np.abs(r)))
    history, damping = [rnorm], []
    for it in range(1, max_iter + 1):
        if rnorm <= tol:
            return (ScalarField(mesh, u),
                    NewtonReport(it - 1, rnorm, damping, True, history))
        j = jacobian(u, tau, problem, metric, mesh)
        delta = _linear_solve(j, -r, ScalarField(mesh, u))
        alpha = 1.0
        for _ in range(_MAX_HALVINGS + 1):
            u_try = u + alpha * delta
            r_try = residual(u_try, tau, problem, metric, mesh)
            rnorm_try = float(np.max(np.abs(r_try)))
            if np.isfinite(rnorm_try) and rnorm_try <= (1.0 - _ARMIJO * alpha) * rnorm:
                break
            alpha *= 0.5
        else:
            raise LineSearchFailed(
                f"no residual decrease after {_MAX_HALVINGS} halvings at tau={tau:g}",
                iterate=ScalarField(mesh, u))
        u, r, rnorm = u_try, r_try, rnorm_try
        damping.append(alpha)
        history.append(rnorm)
    if rnorm <= tol:
        return ScalarField(mesh, u), NewtonReport(max_iter, rnorm, damping, True, history)
    raise MaxIterationsExceeded(
        f"residual {rnorm:.3e} > tol {tol:g} after {max_iter} iterations",
        iterate=ScalarField(mesh, u))


def _as_field(u, mesh):
    if isinstance(u, ScalarField):
        return u
    return ScalarField(mesh, u)


def continuation_solve(problem, metric, mesh, cfg=None, unsafe=False, s_range=None):
    """Advance tau from 0 to 1 starting at the trivial solution.

    Predictor: previous solution, secant extrapolation once two accepted
    points exist.  Newton failure halves dtau (down to dtau_min -> status
    "stalled"); three consecutive easy steps double it (up to dtau_max).
    Validation of the structural conditions runs first unless ``unsafe``.
    """
    cfg = cfg or ContinuationConfig()
    if not 0 < cfg.dtau <= cfg.dtau_max <= 1.0:
        raise ValueError("need 0 < dtau <= dtau_max <= 1")
    if not unsafe:
        if s_range is None:
            try:
                b = height_bound(problem, metric, mesh)
            except ValueError:
                b = 1.0
            s_range = (-2.0 * max(1.0, b), 2.0 * max(1.0, b))
        report = validate_conditions(problem, mesh, metric, s_range)
        if not report.passed:
            raise ValueError(
                "structural conditions fail (pass unsafe=True to proceed):\n"
                + report.summary())

    u, rep = newton_solve(ScalarField.zeros(mesh), 0.0, problem, metric, mesh,
                          tol=cfg.tol, max_iter=cfg.max_newton)
    state = ContinuationState(tau=0.0, u=u, dtau=cfg.dtau)
    state.history.append(ContinuationStep(0.0, rep.iterations, rep.residual_norm, 0.0))
    log.info("continuation tau=%.6f dtau=%.4g newton_iters=%d residual=%.3e",
             0.0, 0.0, rep.iterations, rep.residual_norm)

    prev = None                      # (tau, values) behind the current point
    streak = 0
    while state.tau < 1.0 - 1e-14:
        tau_next = min(1.0, state.tau + state.dtau)
        if prev is not None and tau_next > state.tau:
            slope = (state.u.values - prev[1]) / (state.tau - prev[0])
            guess = state.u.values + slope * (tau_next - state.tau)
        else:
            guess = state.u.values
        try:
            u_next, rep = newton_solve(ScalarField(mesh, guess), tau_next, problem,
                                       metric, mesh, tol=cfg.tol,
                                       max_iter=cfg.max_newton)
        except SolverError as exc:
            log.info("continuation tau=%.6f rejected (%s); halving dtau=%.4g",
                     tau_next, type(exc).__name__, state.dtau / 2)
            state.dtau *= 0.5
            streak = 0
            if state.dtau < cfg.dtau_min:
                state.status = "stalled"
                log.warning("continuation stalled at tau=%.6f (dtau < %.1e)",
                            state.tau, cfg.dtau_min)
                return state
            continue
        prev = (state.tau, state.u.values)
        state.tau, state.u = tau_next, u_next
        state.history.append(ContinuationStep(tau_next, rep.iterations,
                                              rep.residual_norm, state.dtau))
        log.info("continuation tau=%.6f dtau=%.4g newton_iters=%d residual=%.3e",
                 tau_next, state.dtau, rep.iterations, rep.residual_norm)
        streak += 1
        if streak >= cfg.easy_streak:
            state.dtau = min(2.0 * state.dtau, cfg.dtau_max)
    state.status = "converged"
    return state


def uniqueness_probe(problem, metric, mesh, cfg=None, trials=5, state=None, seed=0):
    """Max pairwise sup-norm spread of Newton re-solves from perturbed starts.

    Perturbations are uniform noise of amplitude equal to the a-priori height
    bound (falling back to a fraction of the solution scale when that bound
    is zero or unavailable).  Trials that fail to converge are logged, not
    fatal.  `trials=1` returns 0 by definition.
    """
    cfg = cfg or ContinuationConfig()
    if state is None:
        state = continuation_solve(problem, metric, mesh, cfg)
    if state.status != "converged":
        raise ValueError("uniqueness probe requires a converged continuation")
    base = state.u.values
    try:
        amp = height_bound(problem, metric, mesh)
    except ValueError:
        amp = 0.0
    if amp == 0.0:
        amp = 0.25 * (1.0 + float(np.max(np.abs(base))))
    rng = np.random.default_rng(seed)
    solutions = []
    for t in range(trials):
        start = base + rng.uniform(-amp, amp, size=len(base))
        try:
            u, _ = newton_solve(ScalarField(mesh, start), 1.0, problem, metric, mesh,
                                tol=cfg.tol, max_iter=cfg.max_newton)
        except SolverError as exc:
            log.warning("uniqueness trial %d failed: %s", t, exc)
            continue
        solutions.append(u.values)
    spread = 0.0
    for i in range(len(solutions)):
        for j in range(i + 1, len(solutions)):
            spread = max(spread, float(np.max(np.abs(solutions[i] - solutions[j]))))
    return spread
