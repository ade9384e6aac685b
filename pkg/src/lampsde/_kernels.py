"""Hot scalar time-stepping kernels.

Every function here is written as plain scalar-loop Python so it runs in two
modes: compiled with numba @njit(nogil=True, disk-cached for the canonical
import) or uncompiled. The mode is fixed at import time by the LAMPSDE_JIT environment
variable ("0"/"false"/"no"/"off" disables compilation, anything else or unset
enables it). `load_kernels(jit=...)` imports a fresh copy of this module with
the flag forced, which is how the benchmark and the mode-parity tests hold
both variants in one process.

Transformed drifts are passed as a small coefficient table instead of a
callback so the step loop stays compilable:

    kind 0:  f(x) = sum_j coefs[j] * x**exps[j]            (power sum)
    kind 1:  f(x) = coefs[0]/tan(x/2) + coefs[1]*tan(x/2)  (cot/tan pair)

Implicit-solver status codes:

    0  converged to the scaled residual tolerance
    1  bracket collapsed to <= 4 ulps of width before the tolerance was met;
       the bracket midpoint is returned, flagged at-precision-limit
    2  no convergence (expansion or iteration budget exhausted); the best
       bracket found is reported
"""

import importlib.util
import math
import os
import sys

_EPS = 2.220446049250313e-16

STATUS_OK = 0
STATUS_PRECISION_LIMIT = 1
STATUS_NO_CONVERGENCE = 2

DRIFT_POWER_SUM = 0
DRIFT_COT_TAN = 1

JIT_ENABLED = os.environ.get("LAMPSDE_JIT", "1").strip().lower() not in (
    "0",
    "false",
    "no",
    "off",
)
if JIT_ENABLED:
    try:
        from numba import njit as _njit
    except ImportError:
        JIT_ENABLED = False

if JIT_ENABLED:

    def _jit(func):
        # Only the canonical import may write the on-disk cache: cached
        # entries record the defining module's name, and the forced copies
        # made by load_kernels have names no fresh process can import.
        return _njit(cache=__name__ == "lampsde._kernels", nogil=True)(func)

else:

    def _jit(func):
        return func


@_jit
def drift_f(kind, coefs, exps, x):
    """Evaluate the transformed drift f(x) from its table."""
    if kind == 1:
        t = math.tan(0.5 * x)
        return coefs[0] / t + coefs[1] * t
    s = 0.0
    for j in range(coefs.shape[0]):
        e = exps[j]
        if e == 1.0:
            s += coefs[j] * x
        elif e == -1.0:
            s += coefs[j] / x
        else:
            s += coefs[j] * x**e
    return s


@_jit
def drift_f1(kind, coefs, exps, x):
    """First derivative f'(x)."""
    if kind == 1:
        t = math.tan(0.5 * x)
        ct = 1.0 / t
        return -0.5 * coefs[0] * (1.0 + ct * ct) + 0.5 * coefs[1] * (1.0 + t * t)
    s = 0.0
    for j in range(coefs.shape[0]):
        e = exps[j]
        if e == 1.0:
            s += coefs[j]
        else:
            s += coefs[j] * e * x ** (e - 1.0)
    return s


@_jit
def drift_f2(kind, coefs, exps, x):
    """Second derivative f''(x)."""
    if kind == 1:
        t = math.tan(0.5 * x)
        ct = 1.0 / t
        return 0.5 * coefs[0] * ct * (1.0 + ct * ct) + 0.5 * coefs[1] * t * (1.0 + t * t)
    s = 0.0
    for j in range(coefs.shape[0]):
        e = exps[j]
        if e == 1.0:
            continue
        s += coefs[j] * e * (e - 1.0) * x ** (e - 2.0)
    return s


@_jit
def solve_implicit_scalar(kind, coefs, exps, alpha, beta, dt, c, guess, tol, maxit):
    """Solve G(x) = x - f(x)*dt = c for the unique root in (alpha, beta).

    Newton iteration started at `guess`, safeguarded by a sign-change
    bracket. The bracket is grown from the guess toward the open boundaries:
    midpointing toward a finite boundary, doubling the stride toward an
    infinite one. G is strictly increasing and coercive for admissible steps
    (G -> -inf at alpha, +inf at beta), so a bracket always exists; Newton
    steps that would leave the bracket are replaced by bisection.

    Returns (x, status, lo, hi, evals) with status as in the module header.
    """
    scale = max(1.0, abs(c))
    tol_abs = tol * scale
    evals = 1
    x = guess
    gx = x - drift_f(kind, coefs, exps, x) * dt - c
    if abs(gx) <= tol_abs:
        return x, STATUS_OK, x, x, evals

    lo = guess
    hi = guess
    glo = gx
    ghi = gx
    if gx > 0.0:
        # Root lies below the guess: push lo toward alpha until g(lo) < 0.
        step = max(abs(guess), 1.0)
        bracketed = False
        for _ in range(1100):
            if math.isinf(alpha):
                lo = lo - step
                step = step * 2.0
            else:
                lo = alpha + 0.5 * (lo - alpha)
            glo = lo - drift_f(kind, coefs, exps, lo) * dt - c
            evals += 1
            if glo < 0.0:
                bracketed = True
                break
            hi = lo
            ghi = glo
        if not bracketed:
            return lo, STATUS_NO_CONVERGENCE, lo, hi, evals
    else:
        step = max(abs(guess), 1.0)
        bracketed = False
        for _ in range(1100):
            if math.isinf(beta):
                hi = hi + step
                step = step * 2.0
            else:
                hi = beta - 0.5 * (beta - hi)
            ghi = hi - drift_f(kind, coefs, exps, hi) * dt - c
            evals += 1
            if ghi > 0.0:
                bracketed = True
                break
            lo = hi
            glo = ghi
        if not bracketed:
            return hi, STATUS_NO_CONVERGENCE, lo, hi, evals

    if abs(glo) <= abs(ghi):
        x = lo
        gx = glo
    else:
        x = hi
        gx = ghi
    for _ in range(maxit):
        if gx < 0.0:
            lo = x
        else:
            hi = x
        if abs(gx) <= tol_abs:
            return x, STATUS_OK, lo, hi, evals
        if hi - lo <= 4.0 * _EPS * max(abs(lo), abs(hi)):
            return 0.5 * (lo + hi), STATUS_PRECISION_LIMIT, lo, hi, evals
        d = 1.0 - drift_f1(kind, coefs, exps, x) * dt
        ok = d > 0.0
        if ok:
            xn = x - gx / d
            if not (lo < xn < hi):
                ok = False
        if not ok:
            xn = 0.5 * (lo + hi)
        x = xn
        gx = x - drift_f(kind, coefs, exps, x) * dt - c
        evals += 1
    return x, STATUS_NO_CONVERGENCE, lo, hi, evals


@_jit
def quad_implicit_step(qa, qb, dt, c):
    """Closed-form implicit step when f(x) = qa/x + qb*x (exponents {-1, 1}).

    Positive root of (1 - qb*dt) x^2 - c x - qa*dt = 0, evaluated on the
    cancellation-free branch for either sign of c. Positive for every c
    because the roots' product -qa*dt/(1 - qb*dt) is negative.
    """
    a2 = 1.0 - qb * dt
    disc = c * c + 4.0 * qa * dt * a2
    sq = math.sqrt(disc)
    if c >= 0.0:
        return (c + sq) / (2.0 * a2)
    return 2.0 * qa * dt / (sq - c)


@_jit
def bem_path(kind, coefs, exps, alpha, beta, use_quad, x0, dt, noise, dws, tol, maxit, stride, states):
    """One backward-Euler path in transformed coordinates.

    noise is the signed constant diffusion; dws the raw Brownian increments.
    States at grid indices 0, stride, 2*stride, ... are written into
    `states` (length n/stride + 1). Returns (status, bad_step, evals, nprec).
    """
    states[0] = x0
    x = x0
    evals = 0
    nprec = 0
    qa = coefs[0]
    qb = 0.0
    if use_quad:
        qb = coefs[1]
    n = dws.shape[0]
    for k in range(n):
        c = x + noise * dws[k]
        if use_quad:
            x = quad_implicit_step(qa, qb, dt, c)
        else:
            x, st, lo, hi, ev = solve_implicit_scalar(
                kind, coefs, exps, alpha, beta, dt, c, x, tol, maxit
            )
            evals += ev
            if st == STATUS_NO_CONVERGENCE:
                return STATUS_NO_CONVERGENCE, k, evals, nprec
            if st == STATUS_PRECISION_LIMIT:
                nprec += 1
        if (k + 1) % stride == 0:
            states[(k + 1) // stride] = x
    return STATUS_OK, -1, evals, nprec


@_jit
def bem_block(kind, coefs, exps, alpha, beta, use_quad, x0, dt, noise, dws2, tol, maxit, stride, states2, statuses, bad_steps, evals, nprecs):
    """bem_path over a block of paths (row i of dws2 -> row i of states2)."""
    for i in range(dws2.shape[0]):
        st, bad, ev, npr = bem_path(
            kind, coefs, exps, alpha, beta, use_quad, x0, dt, noise,
            dws2[i], tol, maxit, stride, states2[i],
        )
        statuses[i] = st
        bad_steps[i] = bad
        evals[i] = ev
        nprecs[i] = npr


@_jit
def milstein_cir_block(kappa, theta, sigma, z0, dt, dws2, states2, bad_steps):
    """Drift-implicit Milstein paths for CIR in original coordinates.

    Z_{k+1} = (Z_k + kappa*theta*dt + sigma*sqrt(Z_k)*dw
               + (sigma^2/4)(dw^2 - dt)) / (1 + kappa*dt)

    bad_steps[i] = -1 on success; the step index if Z_k ever left (0, inf)
    (unreachable under the Feller condition, kept as an invariant guard).
    """
    npaths, n = dws2.shape
    for i in range(npaths):
        z = z0
        states2[i, 0] = z
        bad_steps[i] = -1
        for k in range(n):
            if not (z > 0.0):
                bad_steps[i] = k
                break
            dw = dws2[i, k]
            num = z + kappa * theta * dt + sigma * math.sqrt(z) * dw + 0.25 * sigma * sigma * (dw * dw - dt)
            z = num / (1.0 + kappa * dt)
            states2[i, k + 1] = z


@_jit
def em_block(a_coefs, a_exps, b_kind, b_coef, b_exp, lo, hi, y0, dt, dws2, states2, viol_steps, viol_vals):
    """Explicit Euler-Maruyama paths in original coordinates.

    The domain is checked before coefficients are evaluated at a new state,
    so fractional powers never see out-of-domain arguments. On the first
    violation the offending value is recorded at its grid index, the path
    stops, and (viol_steps[i], viol_vals[i]) hold the report.
    """
    npaths, n = dws2.shape
    for i in range(npaths):
        y = y0
        states2[i, 0] = y
        viol_steps[i] = -1
        viol_vals[i] = math.nan
        for k in range(n):
            a = 0.0
            for j in range(a_coefs.shape[0]):
                e = a_exps[j]
                if e == 0.0:
                    a += a_coefs[j]
                elif e == 1.0:
                    a += a_coefs[j] * y
                elif e == -1.0:
                    a += a_coefs[j] / y
                else:
                    a += a_coefs[j] * y**e
            if b_kind == 1:
                b = b_coef * math.sqrt(y * (1.0 - y))
            else:
                b = b_coef * y**b_exp
            y = y + a * dt + b * dws2[i, k]
            states2[i, k + 1] = y
            if not (lo < y < hi):
                viol_steps[i] = k + 1
                viol_vals[i] = y
                break


@_jit
def solve_batch(kind, coefs, exps, alpha, beta, dts, cs, guesses, tol, maxit, xs, statuses, evals):
    """Vectorized front end over solve_implicit_scalar."""
    for i in range(cs.shape[0]):
        x, st, lo, hi, ev = solve_implicit_scalar(
            kind, coefs, exps, alpha, beta, dts[i], cs[i], guesses[i], tol, maxit
        )
        xs[i] = x
        statuses[i] = st
        evals[i] = ev


def load_kernels(jit):
    """Import a fresh copy of this module with the JIT flag forced.

    The regular `lampsde._kernels` import (which honors LAMPSDE_JIT) is left
    untouched; the forced copy lives under its own module name.
    """
    name = "lampsde._kernels_forced_jit" if jit else "lampsde._kernels_forced_py"
    if name in sys.modules:
        return sys.modules[name]
    saved = os.environ.get("LAMPSDE_JIT")
    os.environ["LAMPSDE_JIT"] = "1" if jit else "0"
    try:
        spec = importlib.util.spec_from_file_location(name, __file__)
        mod = importlib.util.module_from_spec(spec)
        sys.modules[name] = mod
        spec.loader.exec_module(mod)
    finally:
        if saved is None:
            os.environ.pop("LAMPSDE_JIT", None)
        else:
            os.environ["LAMPSDE_JIT"] = saved
    return mod
