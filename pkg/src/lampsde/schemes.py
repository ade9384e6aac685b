"""Time-stepping schemes driven by a Brownian path.

run_bem       backward Euler in transformed coordinates (domain-preserving)
run_lbe       the back-transformed approximation Y_k = F^-1(X_k)
run_milstein_cir  drift-implicit Milstein for CIR (dominates squared BEM)
run_explicit_em   explicit Euler-Maruyama baseline; halts on the domain
                  violations the implicit schemes are built to avoid

All runners retain the full trajectory (the strong-error metrics need the
max over grid points); the Monte Carlo engine in `errorlab` uses streaming
kernels instead when only summaries are required.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import _kernels
from .errors import DomainError, InadmissibleStepError, InvalidParamsError, NoConvergenceError
from .models import original_coeff_table
from .stepping import DEFAULT_CONFIG, admissible_step
from .transform import back_transform_path, transform


class SchemeId(str, Enum):
    BEM = "bem"  # transformed coordinates
    LBE = "lbe"
    MILSTEIN_CIR = "milstein-cir"
    EXPLICIT_EM = "explicit-em"


@dataclass(frozen=True)
class Diagnostics:
    solver_evals: int
    min_state: float
    max_state: float
    at_precision_limit: int


@dataclass(frozen=True)
class DomainViolation:
    step_index: int
    value: float


@dataclass(frozen=True, eq=False)
class SchemeRun:
    scheme_id: SchemeId
    states: np.ndarray
    grid: object
    diagnostics: Diagnostics
    transformed: bool
    transformed_states: np.ndarray | None = None
    violation: DomainViolation | None = None


def _check_path(grid, path):
    if path.grid != grid:
        raise ValueError(f"path grid {path.grid} does not match run grid {grid}")
    return np.ascontiguousarray(path.increments, dtype=np.float64)


def run_bem(tm, grid, path, cfg=DEFAULT_CONFIG, x0=None):
    """Backward Euler X_{k+1} = X_k + f(X_{k+1})dt + noise*dw_{k+1}.

    Every step solves the implicit equation inside the open transformed
    domain (closed form when the drift is qa/x + qb*x). x0 defaults to the
    transformed initial value F(y0) of the model behind `tm`.
    """
    dws = _check_path(grid, path)
    if not admissible_step(tm.K, grid.dt, cfg.eta):
        raise InadmissibleStepError(
            f"2*K*dt = {2.0 * tm.K * grid.dt:.6g} >= eta = {cfg.eta} "
            f"(K={tm.K:.6g}, dt={grid.dt:.6g})"
        )
    x0 = tm.x0 if x0 is None else float(x0)
    alpha, beta = tm.domain
    if not (alpha < x0 < beta):
        raise DomainError(f"x0 = {x0} outside transformed domain ({alpha}, {beta})", value=x0)
    states = np.empty(grid.n_steps + 1, dtype=np.float64)
    status, bad, evals, nprec = _kernels.bem_path(
        tm.drift_kind,
        tm.drift_coefs,
        tm.drift_exps,
        alpha,
        beta,
        tm.uses_quad_step(),
        x0,
        grid.dt,
        tm.noise_signed,
        dws,
        cfg.residual_tol,
        cfg.max_iterations,
        1,
        states,
    )
    if status == _kernels.STATUS_NO_CONVERGENCE:
        raise NoConvergenceError(
            f"implicit solve failed at step {bad} (dt={grid.dt:.6g})", step_index=bad
        )
    diag = Diagnostics(
        solver_evals=int(evals),
        min_state=float(states.min()),
        max_state=float(states.max()),
        at_precision_limit=int(nprec),
    )
    return SchemeRun(SchemeId.BEM, states, grid, diag, transformed=True)


def run_lbe(spec, grid, path, cfg=DEFAULT_CONFIG):
    """Lamperti-backward-Euler: Y_k = F^-1(X_k) in the original domain."""
    tm = transform(spec)
    bem = run_bem(tm, grid, path, cfg)
    ys = back_transform_path(tm, bem.states)
    diag = Diagnostics(
        solver_evals=bem.diagnostics.solver_evals,
        min_state=float(ys.min()),
        max_state=float(ys.max()),
        at_precision_limit=bem.diagnostics.at_precision_limit,
    )
    return SchemeRun(
        SchemeId.LBE, ys, grid, diag, transformed=False, transformed_states=bem.states
    )


def run_milstein_cir(params, grid, path, z0):
    """Drift-implicit Milstein for CIR from Z_0 = z0 > 0."""
    dws = _check_path(grid, path)
    if not 2.0 * params.kappa * params.theta >= params.sigma**2:
        raise InvalidParamsError(
            f"Milstein positivity needs 2*kappa*theta >= sigma^2, got "
            f"{2.0 * params.kappa * params.theta:.6g} < {params.sigma**2:.6g}"
        )
    if not z0 > 0.0:
        raise DomainError(f"z0 must be positive, got {z0}", value=z0)
    states2 = np.full((1, grid.n_steps + 1), np.nan, dtype=np.float64)
    bad = np.empty(1, dtype=np.int64)
    _kernels.milstein_cir_block(
        params.kappa, params.theta, params.sigma, float(z0), grid.dt, dws[None, :], states2, bad
    )
    if bad[0] >= 0:
        raise DomainError(
            f"internal invariant failure: Milstein state left (0, inf) at step {bad[0]}",
            index=int(bad[0]),
        )
    states = states2[0]
    diag = Diagnostics(0, float(states.min()), float(states.max()), 0)
    return SchemeRun(SchemeId.MILSTEIN_CIR, states, grid, diag, transformed=False)


def run_explicit_em(spec, grid, path):
    """Explicit Euler-Maruyama baseline in original coordinates.

    Does not preserve the domain: when a step lands outside (l, r) the run
    records the offending (step index, value) in `violation`, keeps the
    offending value at its grid slot, and leaves the remaining slots NaN.
    """
    dws = _check_path(grid, path)
    a_coefs, a_exps, b_kind, b_coef, b_exp, lo, hi = original_coeff_table(spec)
    if not (lo < spec.y0 < hi):
        raise DomainError(f"y0 = {spec.y0} outside domain ({lo}, {hi})", value=spec.y0)
    states2 = np.full((1, grid.n_steps + 1), np.nan, dtype=np.float64)
    viol_steps = np.empty(1, dtype=np.int64)
    viol_vals = np.empty(1, dtype=np.float64)
    _kernels.em_block(
        a_coefs, a_exps, b_kind, b_coef, b_exp, lo, hi, spec.y0, grid.dt,
        dws[None, :], states2, viol_steps, viol_vals,
    )
    states = states2[0]
    violation = None
    if viol_steps[0] >= 0:
        violation = DomainViolation(step_index=int(viol_steps[0]), value=float(viol_vals[0]))
    diag = Diagnostics(0, float(np.nanmin(states)), float(np.nanmax(states)), 0)
    return SchemeRun(
        SchemeId.EXPLICIT_EM, states, grid, diag, transformed=False, violation=violation
    )


def interpolate_linear(run, t):
    """Piecewise-linear interpolation of a run at time(s) t in [0, n*dt]."""
    times = run.grid.times
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0.0) or np.any(t_arr > times[-1]):
        raise ValueError(f"t={t} outside [0, {times[-1]}]")
    out = np.interp(t_arr, times, run.states)
    return float(out) if np.ndim(t) == 0 else out


def write_trajectory_csv(fileobj, grid, columns):
    """CSV export: columns (k, t_k, <name>...). NaN cells are left empty.

    `columns` maps column name -> array of length n_steps+1. Numbers are
    printed with 17 significant digits (exact float64 round trip).
    """
    names = list(columns)
    fileobj.write("k,t," + ",".join(names) + "\n")
    times = grid.times
    for k in range(grid.n_steps + 1):
        cells = [str(k), f"{times[k]:.17g}"]
        for name in names:
            v = columns[name][k]
            cells.append("" if v != v else f"{v:.17g}")  # NaN != NaN
        fileobj.write(",".join(cells) + "\n")
