"""Monte Carlo strong-error estimation, convergence fits, and moment monitors.

Strong errors are measured against a fine-grid self-reference: each path is
simulated once on the reference grid, its increments are coarsened (summed
over dyadic windows, which is exact in floating point), and the same scheme
is rerun on every coarser grid. The reference and all approximations share
the underlying Brownian path, so endpoint/sup differences measure strong
(pathwise) error.

Errors are reported as E|.|^p, not the p-th root; fitted slopes therefore
target p times the scheme's strong order (an order-one scheme shows slope
about 2 for the squared endpoint error).

All Monte Carlo loops run over fixed-size path blocks. Per-path values land
in preallocated arrays indexed by path number, and per-grid-point partial
sums in arrays indexed by block number, so every result is bitwise identical
for any worker count: no reduction order ever depends on thread scheduling.
The kernels release the GIL when compiled, which is what makes thread
workers effective.
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import _kernels
from .brownian import GridSpec, coarsen_increments, sample_increments_block
from .errors import DomainError, InadmissibleStepError, NoConvergenceError
from .models import ModelId, ModelSpec, max_strong_order_p
from .schemes import SchemeId
from .stepping import DEFAULT_CONFIG, admissible_step
from .transform import transform

BLOCK_PATHS = 256


class Metric(str, Enum):
    ENDPOINT_LP = "endpoint-Lp"
    MAX_GRID_LP = "max-grid-Lp"
    MILSTEIN_L1_GRID = "milstein-L1-grid"
    MILSTEIN_SUP_L2 = "milstein-sup-L2"


@dataclass(frozen=True)
class ErrorEstimate:
    """One Monte Carlo error value at one step size (value = E|.|^p)."""

    dt: float
    metric: Metric
    p: float
    value: float
    n_paths: int
    std_error: float
    flags: tuple = ()

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.value >= 0.0:
            raise ValueError(f"error value must be nonnegative, got {self.value}")
        if not self.std_error >= 0.0:
            raise ValueError(f"std-error must be nonnegative, got {self.std_error}")


@dataclass(frozen=True)
class ConvergenceReport:
    """Log-log fit log(value) = intercept + slope * log(dt) over a dt ladder.

    `residual` is the sum of squared fit residuals; `residual_rms` the root
    mean square of the same residuals (both conventions are in circulation,
    so both are reported). Logs are natural.
    """

    estimates: tuple  # ErrorEstimate, sorted by dt ascending
    slope: float
    intercept: float
    residual: float
    residual_rms: float


@dataclass(frozen=True)
class MilsteinComparison:
    """Per-dt gaps between drift-implicit Milstein and LBE for CIR.

    l1_grid_gap[j] holds sup_k E|Z_k - Y_k| at dts[j] (the std-error is the
    one at the maximizing grid index); sup_l2_gap[j] holds
    E max_k |y_ref(t_k) - Z_k|^2 against the fine LBE reference at dt_ref.
    """

    dts: tuple
    l1_grid_gap: tuple   # ErrorEstimate, metric milstein-L1-grid
    sup_l2_gap: tuple    # ErrorEstimate, metric milstein-sup-L2
    l1_slope: float
    sup_l2_slope: float
    dt_ref: float
    n_paths: int
    regime_ratio: float  # kappa*theta/sigma^2
    regime_ok: bool      # regime_ratio > 3/2
    warnings: tuple = ()


@dataclass(frozen=True)
class MomentEstimate:
    """Empirical E max_k |state_k|^q for one exponent q.

    finite_range is the open interval of q with a known-finite moment for
    the continuous process (None when no such published range is tracked);
    in_range says whether q lies inside it.
    """

    q: float
    value: float
    std_error: float
    finite_range: tuple | None
    in_range: bool | None


def _mean_and_se(vals):
    n = vals.shape[0]
    m = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return m, se


def _p_flags(spec, p):
    thr = max_strong_order_p(spec)
    if p >= thr:
        return (f"p={p:g} outside guaranteed regime p < {thr:g}",)
    return ()


def _dyadic_factor(dt_coarse, dt_fine):
    r = dt_coarse / dt_fine
    m = int(round(r))
    if m < 1 or abs(r - m) > 1e-9 * m:
        raise ValueError(
            f"dt-fine={dt_fine:g} does not divide dt-coarse={dt_coarse:g} (ratio {r:g})"
        )
    if m & (m - 1):
        raise ValueError(f"step ratio {m} is not a power of two")
    return m


def _as_blocks(n_paths):
    return [
        (bi, start, min(start + BLOCK_PATHS, n_paths))
        for bi, start in enumerate(range(0, n_paths, BLOCK_PATHS))
    ]


def _run_blocks(blocks, work, workers):
    if workers is None or workers <= 1 or len(blocks) == 1:
        for b in blocks:
            work(b)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # list() drains the iterator so worker exceptions propagate
        list(pool.map(work, blocks))


def _bem_block_states(tm, dt, dws2, stride, cfg):
    npaths = dws2.shape[0]
    states2 = np.empty((npaths, dws2.shape[1] // stride + 1), dtype=np.float64)
    statuses = np.empty(npaths, dtype=np.int64)
    bad_steps = np.empty(npaths, dtype=np.int64)
    evals = np.empty(npaths, dtype=np.int64)
    nprecs = np.empty(npaths, dtype=np.int64)
    alpha, beta = tm.domain
    _kernels.bem_block(
        tm.drift_kind, tm.drift_coefs, tm.drift_exps, alpha, beta,
        tm.uses_quad_step(), tm.x0, dt, tm.noise_signed, dws2,
        cfg.residual_tol, cfg.max_iterations, stride,
        states2, statuses, bad_steps, evals, nprecs,
    )
    failed = statuses == _kernels.STATUS_NO_CONVERGENCE
    if failed.any():
        step = int(bad_steps[int(np.argmax(failed))])
        raise NoConvergenceError(
            f"implicit solve failed at step {step} (dt={dt:.6g})", step_index=step
        )
    return states2


def _milstein_block_states(params, z0, dt, dws2):
    npaths = dws2.shape[0]
    states2 = np.empty((npaths, dws2.shape[1] + 1), dtype=np.float64)
    bad_steps = np.empty(npaths, dtype=np.int64)
    _kernels.milstein_cir_block(
        params.kappa, params.theta, params.sigma, float(z0), dt, dws2, states2, bad_steps
    )
    if (bad_steps >= 0).any():
        step = int(bad_steps[bad_steps >= 0][0])
        raise DomainError(
            f"Milstein iterate left (0, inf) at step {step}; "
            "this breaks the scheme's positivity invariant",
            index=step,
        )
    return states2


def _check_ladder(grid_ref, factors):
    n_ref = grid_ref.n_steps
    if not factors:
        raise ValueError("empty step-size ladder")
    if sorted(factors) != list(factors) or len(set(factors)) != len(factors):
        raise ValueError(f"coarsening factors must be strictly increasing, got {factors}")
    for f in factors:
        if f & (f - 1):
            raise ValueError(f"coarsening factor {f} is not a power of two")
        if n_ref % f:
            raise ValueError(f"factor {f} does not divide the {n_ref}-step reference grid")


def _ladder_values(spec, scheme_id, grid_ref, factors, metric, p, n_paths, seed_stream,
                   cfg, workers):
    """Per-path metric values, one row per coarsening factor.

    The reference run at grid_ref is stored only at stride factors[0] (every
    coarser grid's points are a subset of those), and increments are
    coarsened incrementally factor-to-factor, so each block does one fine
    pass plus one cheap pass per ladder rung.
    """
    scheme_id = SchemeId(scheme_id)
    metric = Metric(metric)
    if metric not in (Metric.ENDPOINT_LP, Metric.MAX_GRID_LP):
        raise ValueError(f"metric {metric.value} is not a strong-error ladder metric")
    if not p >= 1.0:
        raise ValueError(f"p must be >= 1, got {p}")
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    _check_ladder(grid_ref, factors)

    milstein = scheme_id == SchemeId.MILSTEIN_CIR
    if scheme_id == SchemeId.EXPLICIT_EM:
        raise ValueError(
            "explicit-em can leave the state domain and has no strong-error ladder"
        )
    if milstein and spec.model_id != ModelId.CIR:
        raise ValueError("milstein-cir only applies to the CIR model")

    tm = transform(spec)
    if not milstein:
        for f in [1] + list(factors):
            dt = grid_ref.dt * f
            if not admissible_step(tm.K, dt, cfg.eta):
                raise InadmissibleStepError(
                    f"2*K*dt = {2.0 * tm.K * dt:.6g} >= eta = {cfg.eta} at dt={dt:.6g}"
                )

    s_ref = factors[0]
    out = np.empty((len(factors), n_paths), dtype=np.float64)

    def work(block):
        _, start, stop = block
        dws = sample_increments_block(grid_ref, seed_stream, range(start, stop))
        if milstein:
            ref = _milstein_block_states(spec.params, spec.y0, grid_ref.dt, dws)[:, ::s_ref]
        else:
            ref = _bem_block_states(tm, grid_ref.dt, dws, s_ref, cfg)
            if scheme_id == SchemeId.LBE:
                ref = tm.inverse(ref)
        cur, fcur = dws, 1
        for j, f in enumerate(factors):
            if f > fcur:
                cur = coarsen_increments(cur, f // fcur)
                fcur = f
            dt_c = grid_ref.dt * f
            if milstein:
                app = _milstein_block_states(spec.params, spec.y0, dt_c, cur)
            else:
                app = _bem_block_states(tm, dt_c, cur, 1, cfg)
                if scheme_id == SchemeId.LBE:
                    app = tm.inverse(app)
            diff = np.abs(ref[:, :: f // s_ref] - app)
            vals = diff[:, -1] if metric == Metric.ENDPOINT_LP else diff.max(axis=1)
            out[j, start:stop] = vals**p

    _run_blocks(_as_blocks(n_paths), work, workers)
    return out


def estimate_strong_error(spec, scheme_id, dt_coarse, dt_fine, metric, p, n_paths,
                          seed_stream, T=1.0, cfg=DEFAULT_CONFIG, workers=None):
    """Strong error of one coarse grid against a fine self-reference.

    Returns an ErrorEstimate with value = E|.|^p over n_paths coupled pairs
    (fine path, coarsened rerun). dt_coarse == dt_fine compares a run with
    itself and gives exactly 0.
    """
    factor = _dyadic_factor(dt_coarse, dt_fine)
    grid_ref = GridSpec(T, dt_fine)
    vals = _ladder_values(
        spec, scheme_id, grid_ref, [factor], metric, p, n_paths, seed_stream, cfg, workers
    )
    value, se = _mean_and_se(vals[0])
    return ErrorEstimate(
        dt=float(dt_coarse), metric=Metric(metric), p=float(p), value=value,
        n_paths=n_paths, std_error=se, flags=_p_flags(spec, p),
    )


def convergence_study(spec, scheme_id, dts, dt_ref, metric, p, n_paths, seed_stream,
                      T=1.0, cfg=DEFAULT_CONFIG, workers=None):
    """Estimate errors over a dt ladder sharing one reference, then fit.

    Cheaper than repeated estimate_strong_error calls: the fine reference is
    simulated once per path and reused for the whole ladder.
    """
    dts_sorted = sorted(float(dt) for dt in dts)
    factors = [_dyadic_factor(dt, dt_ref) for dt in dts_sorted]
    grid_ref = GridSpec(T, dt_ref)
    vals = _ladder_values(
        spec, scheme_id, grid_ref, factors, metric, p, n_paths, seed_stream, cfg, workers
    )
    flags = _p_flags(spec, p)
    estimates = []
    for j, dt in enumerate(dts_sorted):
        value, se = _mean_and_se(vals[j])
        estimates.append(
            ErrorEstimate(
                dt=dt, metric=Metric(metric), p=float(p), value=value,
                n_paths=n_paths, std_error=se, flags=flags,
            )
        )
    return fit_convergence(estimates)


def fit_convergence(estimates):
    """Ordinary least squares of log(value) on log(dt).

    Needs at least 3 estimates, all with positive values (a self-comparison
    contributes an exact 0 and cannot be fitted).
    """
    ests = tuple(sorted(estimates, key=lambda e: e.dt))
    if len(ests) < 3:
        raise ValueError(f"need at least 3 step sizes for a fit, got {len(ests)}")
    values = np.array([e.value for e in ests], dtype=np.float64)
    if not (values > 0.0).all():
        raise ValueError("all error values must be positive for a log-log fit")
    x = np.log(np.array([e.dt for e in ests], dtype=np.float64))
    y = np.log(values)
    slope, intercept = np.polyfit(x, y, 1)
    r = y - (slope * x + intercept)
    ss = float(np.dot(r, r))
    return ConvergenceReport(
        estimates=ests,
        slope=float(slope),
        intercept=float(intercept),
        residual=ss,
        residual_rms=math.sqrt(ss / len(ests)),
    )


def _loglog_slope(dts, values):
    if len(dts) < 2 or not all(v > 0.0 for v in values):
        return math.nan
    return float(np.polyfit(np.log(np.asarray(dts)), np.log(np.asarray(values)), 1)[0])


def compare_milstein_lbe(params, y0, T, dts, n_paths, seed_stream, dt_ref=None,
                         cfg=DEFAULT_CONFIG, workers=None):
    """Gap between drift-implicit Milstein and LBE for CIR across a dt ladder.

    Both schemes run on the same Brownian increments at every dt. Two gaps
    are measured per dt: sup_k E|Z_k - Y_k| between the two schemes on the
    shared grid, and E max_k |y_ref(t_k) - Z_k|^2 against a fine LBE
    reference at dt_ref (default: min(dts)/8). The guarantee of an O(dt) L1
    gap needs kappa*theta/sigma^2 > 3/2; outside that regime the comparison
    still runs but carries a warning.
    """
    spec = ModelSpec(ModelId.CIR, params, float(y0))
    tm = transform(spec)  # validates params, including the Feller condition
    regime_ratio = params.kappa * params.theta / params.sigma**2
    regime_ok = regime_ratio > 1.5
    warnings = ()
    if not regime_ok:
        warnings = (
            f"kappa*theta/sigma^2 = {regime_ratio:.6g} <= 3/2: "
            "the O(dt) gap bound is not guaranteed in this regime",
        )

    dts_sorted = sorted(float(dt) for dt in dts)
    if dt_ref is None:
        dt_ref = dts_sorted[0] / 8.0
    grid_ref = GridSpec(T, dt_ref)
    factors = [_dyadic_factor(dt, dt_ref) for dt in dts_sorted]
    _check_ladder(grid_ref, factors)
    n_ref = grid_ref.n_steps
    s_ref = factors[0]

    blocks = _as_blocks(n_paths)
    nb = len(blocks)
    sup_vals = np.empty((len(factors), n_paths), dtype=np.float64)
    gap_sums = [np.zeros((nb, n_ref // f + 1)) for f in factors]
    gap_sqsums = [np.zeros((nb, n_ref // f + 1)) for f in factors]

    def work(block):
        bi, start, stop = block
        dws = sample_increments_block(grid_ref, seed_stream, range(start, stop))
        yref = tm.inverse(_bem_block_states(tm, dt_ref, dws, s_ref, cfg))
        cur, fcur = dws, 1
        for j, f in enumerate(factors):
            if f > fcur:
                cur = coarsen_increments(cur, f // fcur)
                fcur = f
            dt_c = dt_ref * f
            ys = tm.inverse(_bem_block_states(tm, dt_c, cur, 1, cfg))
            zs = _milstein_block_states(params, y0, dt_c, cur)
            gap = np.abs(zs - ys)
            gap_sums[j][bi] = gap.sum(axis=0)
            gap_sqsums[j][bi] = (gap * gap).sum(axis=0)
            sup_vals[j, start:stop] = ((yref[:, :: f // s_ref] - zs) ** 2).max(axis=1)

    _run_blocks(blocks, work, workers)

    l1_estimates = []
    sup_estimates = []
    for j, dt in enumerate(dts_sorted):
        mean_k = gap_sums[j].sum(axis=0) / n_paths
        k_star = int(np.argmax(mean_k))
        m = float(mean_k[k_star])
        if n_paths > 1:
            sq = float(gap_sqsums[j].sum(axis=0)[k_star])
            var = max(sq - n_paths * m * m, 0.0) / (n_paths - 1)
            se = math.sqrt(var / n_paths)
        else:
            se = 0.0
        l1_estimates.append(
            ErrorEstimate(dt, Metric.MILSTEIN_L1_GRID, 1.0, m, n_paths, se)
        )
        sup_value, sup_se = _mean_and_se(sup_vals[j])
        sup_estimates.append(
            ErrorEstimate(dt, Metric.MILSTEIN_SUP_L2, 2.0, sup_value, n_paths, sup_se)
        )

    return MilsteinComparison(
        dts=tuple(dts_sorted),
        l1_grid_gap=tuple(l1_estimates),
        sup_l2_gap=tuple(sup_estimates),
        l1_slope=_loglog_slope(dts_sorted, [e.value for e in l1_estimates]),
        sup_l2_slope=_loglog_slope(dts_sorted, [e.value for e in sup_estimates]),
        dt_ref=float(dt_ref),
        n_paths=n_paths,
        regime_ratio=float(regime_ratio),
        regime_ok=regime_ok,
        warnings=warnings,
    )


def moment_finite_range(spec, transformed):
    """Open q-interval with E sup_t |state|^q known finite, or None.

    Ranges follow from the published moment bounds for the continuous
    processes; the transformed ranges map them through F (a square root
    halves moment orders, etc.). For cot/tan and power-law drifts without a
    clean published range the answer is None and monitors flag the exponent
    as unchecked.
    """
    p = spec.params
    if spec.model_id == ModelId.CIR:
        q0 = -2.0 * p.kappa * p.theta / p.sigma**2
        return (2.0 * q0, math.inf) if transformed else (q0, math.inf)
    if spec.model_id == ModelId.CEV:
        return (-math.inf, math.inf)
    if spec.model_id == ModelId.HESTON32:
        hi = 2.0 + 2.0 * p.c1 / p.c3**2
        # x = y^(-1/2), so E x^q = E y^(-q/2) and the upper bound flips sign
        return (-2.0 * hi, math.inf) if transformed else (-math.inf, hi)
    if spec.model_id == ModelId.WRIGHT_FISHER:
        q0 = -2.0 * p.a / p.gamma**2
        # x = 2 arcsin(sqrt(y)) ~ 2 sqrt(y) near 0 and is bounded above by pi
        return (2.0 * q0, math.inf) if transformed else (q0, math.inf)
    return None


def moment_monitor(spec, scheme_id, grid, q_list, n_paths, seed_stream,
                   cfg=DEFAULT_CONFIG, workers=None):
    """Empirical E max_k |state_k|^q for each q (negative q probe inverses).

    The state is whatever the scheme produces: transformed for bem, original
    for lbe and milstein-cir. For q < 0 the pathwise max of |state|^q is the
    min of |state| raised to q, so only the per-path extremes are kept.
    """
    scheme_id = SchemeId(scheme_id)
    if scheme_id == SchemeId.EXPLICIT_EM:
        raise ValueError("explicit-em can leave the domain; nothing to monitor")
    milstein = scheme_id == SchemeId.MILSTEIN_CIR
    if milstein and spec.model_id != ModelId.CIR:
        raise ValueError("milstein-cir only applies to the CIR model")
    tm = transform(spec)
    if not milstein and not admissible_step(tm.K, grid.dt, cfg.eta):
        raise InadmissibleStepError(
            f"2*K*dt = {2.0 * tm.K * grid.dt:.6g} >= eta = {cfg.eta}"
        )

    min_abs = np.empty(n_paths, dtype=np.float64)
    max_abs = np.empty(n_paths, dtype=np.float64)

    def work(block):
        _, start, stop = block
        dws = sample_increments_block(grid, seed_stream, range(start, stop))
        if milstein:
            states = _milstein_block_states(spec.params, spec.y0, grid.dt, dws)
        else:
            states = _bem_block_states(tm, grid.dt, dws, 1, cfg)
            if scheme_id == SchemeId.LBE:
                states = tm.inverse(states)
        a = np.abs(states)
        min_abs[start:stop] = a.min(axis=1)
        max_abs[start:stop] = a.max(axis=1)

    _run_blocks(_as_blocks(n_paths), work, workers)

    rng = moment_finite_range(spec, transformed=scheme_id == SchemeId.BEM)
    results = []
    for q in q_list:
        q = float(q)
        vals = (max_abs if q >= 0.0 else min_abs) ** q
        value, se = _mean_and_se(vals)
        in_range = None if rng is None else bool(rng[0] < q < rng[1])
        results.append(MomentEstimate(q, value, se, rng, in_range))
    return tuple(results)


def write_estimates_csv(fileobj, estimates):
    """CSV rows (dt, metric, p, value, std-error), 17 significant digits."""
    fileobj.write("dt,metric,p,value,std-error\n")
    for e in estimates:
        fileobj.write(
            f"{e.dt:.17g},{e.metric.value},{e.p:.17g},{e.value:.17g},{e.std_error:.17g}\n"
        )


def write_loglog_csv(fileobj, report):
    """Plot-ready CSV: raw points, their natural logs, and the fitted line."""
    fileobj.write("dt,value,log-dt,log-value,fit-log-value\n")
    for e in report.estimates:
        ld = math.log(e.dt)
        fileobj.write(
            f"{e.dt:.17g},{e.value:.17g},{ld:.17g},"
            f"{math.log(e.value):.17g},{report.intercept + report.slope * ld:.17g}\n"
        )


def estimate_to_dict(e):
    return {
        "dt": e.dt,
        "metric": e.metric.value,
        "p": e.p,
        "value": e.value,
        "n-paths": e.n_paths,
        "std-error": e.std_error,
        "flags": list(e.flags),
    }


def report_to_dict(report):
    return {
        "slope": report.slope,
        "intercept": report.intercept,
        "residual": report.residual,
        "residual-rms": report.residual_rms,
        "estimates": [estimate_to_dict(e) for e in report.estimates],
    }


def comparison_to_dict(comp):
    return {
        "dts": list(comp.dts),
        "dt-ref": comp.dt_ref,
        "n-paths": comp.n_paths,
        "l1-grid-gap": [estimate_to_dict(e) for e in comp.l1_grid_gap],
        "sup-l2-gap": [estimate_to_dict(e) for e in comp.sup_l2_gap],
        "l1-slope": comp.l1_slope,
        "sup-l2-slope": comp.sup_l2_slope,
        "regime-ratio": comp.regime_ratio,
        "regime-ok": comp.regime_ok,
        "warnings": list(comp.warnings),
    }


def write_report_json(fileobj, report, extra=None):
    doc = dict(extra) if extra else {}
    doc.update(report_to_dict(report))
    json.dump(doc, fileobj, indent=2)
    fileobj.write("\n")
