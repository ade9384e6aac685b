"""Lamperti transform: per-model additive-noise form of the SDE.

For dy = a(y) dt + b(y) dw and F with F' = lambda/b, the process x = F(y)
satisfies dx = f(x) dt + lambda dw with

    f(x) = lambda * ( a(F^-1(x))/b(F^-1(x)) - b'(F^-1(x))/2 ).

Each model gets its closed-form transform, inverse, drift f with analytic
f' and f'', the constant noise level, the transformed domain, and a
one-sided Lipschitz constant K with (x-y)(f(x)-f(y)) <= K (x-y)^2.

Models whose natural F is decreasing (Heston32, AitSahalia: F(y) = y^(1-rho)
with rho > 1) have negative lambda; that is recorded as noise_sign = -1 and
the schemes negate the Brownian increments they feed to the transformed
drift, leaving the drift algebra untouched. The driving noise -w is again a
Brownian motion, so path coupling with the original coordinates is exact.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DomainError, InvalidParamsError
from .models import ModelId, validate_params

DRIFT_POWER_SUM = _kernels.DRIFT_POWER_SUM
DRIFT_COT_TAN = _kernels.DRIFT_COT_TAN


@dataclass(frozen=True)
class InverseDriftStructure:
    """Singular-drift decomposition f(x) = c1m * x^(-m1) + h(x).

    Registered only where a single inverse power carries the whole
    singularity and the remainder h grows at most like |x|^m2.
    """

    c1m: float
    m1: float
    m2: float


@dataclass(frozen=True, eq=False)
class TransformedModel:
    """Additive-noise SDE dx = f(x) dt + (noise_sign * noise_level) dw."""

    model_id: ModelId
    spec: object
    f: callable
    f1: callable
    f2: callable
    noise_level: float
    noise_sign: int
    domain: tuple
    forward: callable
    inverse: callable
    K: float
    inverse_drift_structure: InverseDriftStructure | None
    drift_kind: int
    drift_coefs: np.ndarray
    drift_exps: np.ndarray

    @property
    def noise_signed(self):
        return self.noise_sign * self.noise_level

    @property
    def x0(self):
        """Transformed initial value F(y0)."""
        return float(self.forward(self.spec.y0))

    def uses_quad_step(self):
        """True when the implicit step has the {-1, +1} closed form."""
        return (
            self.drift_kind == DRIFT_POWER_SUM
            and self.drift_coefs.shape[0] == 2
            and self.drift_exps[0] == -1.0
            and self.drift_exps[1] == 1.0
            and self.drift_coefs[0] > 0.0
        )


def _power_sum_fns(coefs, exps):
    def f(x):
        arr = np.asarray(x, dtype=np.float64)
        out = np.zeros_like(arr)
        for c, e in zip(coefs, exps):
            out = out + c * arr**e
        return float(out) if np.ndim(x) == 0 else out

    def f1(x):
        arr = np.asarray(x, dtype=np.float64)
        out = np.zeros_like(arr)
        for c, e in zip(coefs, exps):
            out = out + c * e * arr ** (e - 1.0)
        return float(out) if np.ndim(x) == 0 else out

    def f2(x):
        arr = np.asarray(x, dtype=np.float64)
        out = np.zeros_like(arr)
        for c, e in zip(coefs, exps):
            out = out + c * e * (e - 1.0) * arr ** (e - 2.0)
        return float(out) if np.ndim(x) == 0 else out

    return f, f1, f2


def _cot_tan_fns(A, B):
    def f(x):
        t = np.tan(0.5 * np.asarray(x, dtype=np.float64))
        out = A / t + B * t
        return float(out) if np.ndim(x) == 0 else out

    def f1(x):
        t = np.tan(0.5 * np.asarray(x, dtype=np.float64))
        ct = 1.0 / t
        out = -0.5 * A * (1.0 + ct * ct) + 0.5 * B * (1.0 + t * t)
        return float(out) if np.ndim(x) == 0 else out

    def f2(x):
        t = np.tan(0.5 * np.asarray(x, dtype=np.float64))
        ct = 1.0 / t
        out = 0.5 * A * ct * (1.0 + ct * ct) + 0.5 * B * t * (1.0 + t * t)
        return float(out) if np.ndim(x) == 0 else out

    return f, f1, f2


def _merge_terms(coefs, exps):
    """Combine equal exponents and sort ascending (stable table layout)."""
    merged = {}
    for c, e in zip(coefs, exps):
        merged[e] = merged.get(e, 0.0) + c
    items = sorted(merged.items())
    exps_arr = np.array([e for e, _ in items], dtype=np.float64)
    coefs_arr = np.array([c for _, c in items], dtype=np.float64)
    return coefs_arr, exps_arr


def _numeric_one_sided_k(f1):
    """max(0, sup f') over a log grid of 1e5 points in (1e-8, 1e8), +1%."""
    grid = np.logspace(-8.0, 8.0, 100_000)
    sup = float(np.max(f1(grid)))
    return 1.01 * max(0.0, sup)


def _vec(fn):
    def wrapped(y):
        out = fn(np.asarray(y, dtype=np.float64))
        return float(out) if np.ndim(y) == 0 else out

    return wrapped


def transform(spec):
    """Build the TransformedModel for a validated ModelSpec.

    Raises InvalidParamsError when validate_params fails.
    """
    report = validate_params(spec)
    if not report.valid:
        names = ", ".join(c.name for c in report.violated())
        raise InvalidParamsError(f"invalid {spec.model_id.value} parameters: {names}")
    p = spec.params

    if spec.model_id is ModelId.CIR:
        theta_v = p.theta_v
        coefs, exps = _merge_terms([0.5 * p.kappa * theta_v, -0.5 * p.kappa], [-1.0, 1.0])
        f, f1, f2 = _power_sum_fns(coefs, exps)
        return TransformedModel(
            model_id=spec.model_id,
            spec=spec,
            f=f, f1=f1, f2=f2,
            noise_level=0.5 * p.sigma,
            noise_sign=1,
            domain=(0.0, math.inf),
            forward=_vec(np.sqrt),
            inverse=_vec(np.square),
            K=-0.5 * p.kappa,
            inverse_drift_structure=InverseDriftStructure(0.5 * p.kappa * theta_v, 1.0, 1.0),
            drift_kind=DRIFT_POWER_SUM,
            drift_coefs=coefs,
            drift_exps=exps,
        )

    if spec.model_id is ModelId.CEV:
        one_ma = 1.0 - p.alpha
        coefs, exps = _merge_terms(
            [one_ma * p.kappa * p.theta, -one_ma * 0.5 * p.alpha * p.sigma**2, -one_ma * p.kappa],
            [-p.alpha / one_ma, -1.0, 1.0],
        )
        f, f1, f2 = _power_sum_fns(coefs, exps)
        inv_exp = 1.0 / one_ma
        return TransformedModel(
            model_id=spec.model_id,
            spec=spec,
            f=f, f1=f1, f2=f2,
            noise_level=one_ma * p.sigma,
            noise_sign=1,
            domain=(0.0, math.inf),
            forward=_vec(lambda y: y**one_ma),
            inverse=_vec(lambda x: x**inv_exp),
            K=_numeric_one_sided_k(f1),
            inverse_drift_structure=None,
            drift_kind=DRIFT_POWER_SUM,
            drift_coefs=coefs,
            drift_exps=exps,
        )

    if spec.model_id is ModelId.HESTON32:
        c1m = 0.5 * p.c1 + 0.375 * p.c3**2
        coefs, exps = _merge_terms([c1m, -0.5 * p.c1 * p.c2], [-1.0, 1.0])
        f, f1, f2 = _power_sum_fns(coefs, exps)
        return TransformedModel(
            model_id=spec.model_id,
            spec=spec,
            f=f, f1=f1, f2=f2,
            noise_level=0.5 * p.c3,
            noise_sign=-1,
            domain=(0.0, math.inf),
            forward=_vec(lambda y: 1.0 / np.sqrt(y)),
            inverse=_vec(lambda x: x**-2.0),
            K=-0.5 * p.c1 * p.c2,
            inverse_drift_structure=InverseDriftStructure(c1m, 1.0, 1.0),
            drift_kind=DRIFT_POWER_SUM,
            drift_coefs=coefs,
            drift_exps=exps,
        )

    if spec.model_id is ModelId.WRIGHT_FISHER:
        A = p.a - 0.25 * p.gamma**2
        B = -(p.b - p.a - 0.25 * p.gamma**2)
        coefs = np.array([A, B], dtype=np.float64)
        exps = np.zeros(2, dtype=np.float64)
        f, f1, f2 = _cot_tan_fns(A, B)
        return TransformedModel(
            model_id=spec.model_id,
            spec=spec,
            f=f, f1=f1, f2=f2,
            noise_level=p.gamma,
            noise_sign=1,
            domain=(0.0, math.pi),
            forward=_vec(lambda y: 2.0 * np.arcsin(np.sqrt(y))),
            inverse=_vec(lambda x: np.sin(0.5 * x) ** 2),
            K=0.0,
            inverse_drift_structure=None,
            drift_kind=DRIFT_COT_TAN,
            drift_coefs=coefs,
            drift_exps=exps,
        )

    # AitSahalia, F(y) = y^(1-rho): generic power-sum drift; at the critical
    # point (r=2, rho=3/2) the alpha_2 and diffusion-derivative terms merge
    # at exponent -1 and the table reduces to the quintic-reciprocal form.
    rho = p.rho
    rm1 = rho - 1.0
    coefs_raw = [
        -rm1 * p.alpha_m1,
        rm1 * p.alpha_0,
        -rm1 * p.alpha_1,
        rm1 * p.alpha_2,
        0.5 * rm1 * rho * p.sigma**2,
    ]
    exps_raw = [
        (1.0 + rho) / rm1,
        rho / rm1,
        1.0,
        (rho - p.r) / rm1,
        -1.0,
    ]
    coefs, exps = _merge_terms(coefs_raw, exps_raw)
    f, f1, f2 = _power_sum_fns(coefs, exps)
    inv_exp = 1.0 / (1.0 - rho)
    structure = None
    if p.critical:
        structure = InverseDriftStructure(0.5 * p.alpha_2 + 0.375 * p.sigma**2, 1.0, 5.0)
    return TransformedModel(
        model_id=spec.model_id,
        spec=spec,
        f=f, f1=f1, f2=f2,
        noise_level=rm1 * p.sigma,
        noise_sign=-1,
        domain=(0.0, math.inf),
        forward=_vec(lambda y: y ** (1.0 - rho)),
        inverse=_vec(lambda x: x**inv_exp),
        K=_numeric_one_sided_k(f1),
        inverse_drift_structure=structure,
        drift_kind=DRIFT_POWER_SUM,
        drift_coefs=coefs,
        drift_exps=exps,
    )


def back_transform_path(tm, xs):
    """Map transformed states back: Y_k = F^-1(X_k), elementwise.

    Every x must lie strictly inside the transformed domain; the error
    identifies the first offending index.
    """
    arr = np.asarray(xs, dtype=np.float64)
    alpha, beta = tm.domain
    bad = ~((arr > alpha) & (arr < beta))
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise DomainError(
            f"transformed state {arr.flat[idx]!r} at index {idx} outside ({alpha}, {beta})",
            index=idx,
            value=float(arr.flat[idx]),
        )
    return tm.inverse(arr)
