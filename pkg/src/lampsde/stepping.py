"""Backward-Euler implicit step: solve G(x) = x - f(x)*dt = c in (alpha, beta).

For admissible steps (2*max(0,K)*dt < eta with eta in (0,1)) G is continuous,
strictly increasing and coercive on the open domain, so the step equation has
exactly one solution. Models whose transformed drift is qa/x + qb*x get a
closed-form quadratic step; everything else goes through the safeguarded
Newton solver in `_kernels`.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DomainError, InadmissibleStepError, NoConvergenceError


@dataclass(frozen=True)
class StepSolverConfig:
    """Solver knobs: scaled residual tolerance, iteration budget, eta.

    The residual is |G(x) - c| measured relative to max(1, |c|). eta is the
    admissibility margin in 2*K*dt < eta.
    """

    residual_tol: float = 1e-12
    max_iterations: int = 100
    eta: float = 0.5

    def __post_init__(self):
        if not (self.residual_tol > 0.0):
            raise ValueError("residual_tol must be positive")
        if not (0.0 < self.eta < 1.0):
            raise ValueError("eta must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


DEFAULT_CONFIG = StepSolverConfig()


def admissible_step(K, dt, eta=0.5):
    """True iff 2*max(0,K)*dt < eta. No restriction for K <= 0."""
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    return 2.0 * max(0.0, K) * dt < eta


@dataclass(frozen=True)
class SolveInfo:
    status: int
    evals: int
    bracket: tuple

    @property
    def at_precision_limit(self):
        return self.status == _kernels.STATUS_PRECISION_LIMIT


def solve_implicit(tm, dt, c, guess, cfg=DEFAULT_CONFIG, full=False):
    """Unique x in (alpha, beta) with x - f(x)*dt = c, to scaled tolerance.

    `guess` (typically the previous state) seeds the Newton iteration and
    must lie inside the open domain. Raises InadmissibleStepError when the
    step-size condition fails and NoConvergenceError (carrying the best
    bracket) when the iteration budget runs out. With full=True also returns
    a SolveInfo, whose at_precision_limit flag marks roots pinned only to a
    4-ulp bracket.
    """
    alpha, beta = tm.domain
    if not admissible_step(tm.K, dt, cfg.eta):
        raise InadmissibleStepError(
            f"2*K*dt = {2.0 * tm.K * dt:.6g} >= eta = {cfg.eta} (K={tm.K:.6g}, dt={dt:.6g})"
        )
    if not (alpha < guess < beta):
        raise DomainError(f"guess {guess} outside transformed domain ({alpha}, {beta})", value=guess)
    x, status, lo, hi, evals = _kernels.solve_implicit_scalar(
        tm.drift_kind,
        tm.drift_coefs,
        tm.drift_exps,
        alpha,
        beta,
        float(dt),
        float(c),
        float(guess),
        cfg.residual_tol,
        cfg.max_iterations,
    )
    if status == _kernels.STATUS_NO_CONVERGENCE:
        raise NoConvergenceError(
            f"implicit step failed after {evals} evaluations "
            f"(dt={dt:.6g}, c={c:.6g}); best bracket [{lo!r}, {hi!r}]",
            bracket=(lo, hi),
        )
    if full:
        return x, SolveInfo(status=status, evals=evals, bracket=(lo, hi))
    return x


def cir_step_closed_form(params, dt, xk, dw):
    """Closed-form BEM step for transformed CIR.

    Multiplying X = X_k + (kappa/2)(theta_v/X - X)*dt + (sigma/2)*dw by 2X
    gives (2 + kappa*dt) X^2 - 2cX - kappa*theta_v*dt = 0 with
    c = X_k + sigma*dw/2; the returned positive root solves the implicit
    equation to residual tolerance. Positive for every dw because the roots'
    product is negative (theta_v > 0 under the Feller condition).
    """
    if not xk > 0.0:
        raise DomainError(f"state must be positive, got {xk}", value=xk)
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    c = xk + 0.5 * params.sigma * dw
    return _kernels.quad_implicit_step(0.5 * params.kappa * params.theta_v, -0.5 * params.kappa, dt, c)


def milstein_cir_step(params, dt, zk, dw):
    """Drift-implicit Milstein step for CIR (original coordinates).

    Z_{k+1} = (Z_k + kappa*theta*dt + sigma*sqrt(Z_k)*dw
               + (sigma^2/4)(dw^2 - dt)) / (1 + kappa*dt),
    which dominates the squared closed-form BEM step under shared increments
    and hence stays positive when 2*kappa*theta >= sigma^2.
    """
    if not zk > 0.0:
        raise DomainError(f"state must be positive, got {zk}", value=zk)
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    num = (
        zk
        + params.kappa * params.theta * dt
        + params.sigma * math.sqrt(zk) * dw
        + 0.25 * params.sigma**2 * (dw * dw - dt)
    )
    return num / (1.0 + params.kappa * dt)
