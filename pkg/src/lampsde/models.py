"""Model zoo: five scalar SDEs on open intervals.

Each model is dy = a(y) dt + b(y) dw on a domain (l, r) with a parameter
validity predicate (Feller-type conditions) guaranteeing the solution never
hits the boundary:

    CIR           dy = kappa(theta - y) dt + sigma sqrt(y) dw      on (0, inf)
    CEV           dy = kappa(theta - y) dt + sigma y^alpha dw      on (0, inf)
    Heston32      dy = c1 y (c2 - y) dt + c3 y^(3/2) dw            on (0, inf)
    WrightFisher  dy = (a - b y) dt + gamma sqrt(y(1-y)) dw        on (0, 1)
    AitSahalia    dy = (a_-1/y - a_0 + a_1 y - a_2 y^r) dt
                       + sigma y^rho dw                            on (0, inf)

Drift and diffusion are also exposed as small coefficient tables (power sums)
so the time-stepping kernels can evaluate them without callbacks.
"""

import math
from dataclasses import dataclass, field, fields
from enum import Enum

import numpy as np

from .errors import DomainError, InvalidParamsError


class ModelId(str, Enum):
    CIR = "CIR"
    CEV = "CEV"
    HESTON32 = "Heston32"
    WRIGHT_FISHER = "WrightFisher"
    AIT_SAHALIA = "AitSahalia"


@dataclass(frozen=True)
class CIRParams:
    """Cox-Ingersoll-Ross: mean-reversion kappa, mean level theta, vol sigma."""

    kappa: float
    theta: float
    sigma: float

    @property
    def theta_v(self):
        """Adjusted mean level theta - sigma^2/(4 kappa) of the transformed drift."""
        return self.theta - self.sigma**2 / (4.0 * self.kappa)

    @property
    def feller_ratio(self):
        return 2.0 * self.kappa * self.theta / self.sigma**2


@dataclass(frozen=True)
class CEVParams:
    kappa: float
    theta: float
    sigma: float
    alpha: float


@dataclass(frozen=True)
class Heston32Params:
    c1: float
    c2: float
    c3: float

    def induced_cir(self):
        """CIR triple (kappa, theta, sigma) of the transformed 3/2 process."""
        return CIRParams(
            kappa=self.c1 * self.c2,
            theta=1.0 / self.c2 + self.c3**2 / (self.c1 * self.c2),
            sigma=self.c3,
        )


@dataclass(frozen=True)
class WrightFisherParams:
    a: float
    b: float
    gamma: float


@dataclass(frozen=True)
class AitSahaliaParams:
    alpha_m1: float
    alpha_0: float
    alpha_1: float
    alpha_2: float
    sigma: float
    r: float
    rho: float

    @property
    def critical(self):
        return self.r == 2.0 and self.rho == 1.5


_PARAM_CLASSES = {
    ModelId.CIR: CIRParams,
    ModelId.CEV: CEVParams,
    ModelId.HESTON32: Heston32Params,
    ModelId.WRIGHT_FISHER: WrightFisherParams,
    ModelId.AIT_SAHALIA: AitSahaliaParams,
}


@dataclass(frozen=True)
class ModelSpec:
    """A scalar SDE instance: model identity, parameters, initial value."""

    model_id: ModelId
    params: object
    y0: float

    @property
    def domain(self):
        """Open interval (l, r) the solution lives in."""
        if self.model_id is ModelId.WRIGHT_FISHER:
            return (0.0, 1.0)
        return (0.0, math.inf)


def make_spec(model_id, y0, **params):
    """Convenience constructor: make_spec('CIR', 0.125, kappa=2, theta=0.125, sigma=0.5)."""
    mid = ModelId(model_id)
    return ModelSpec(model_id=mid, params=_PARAM_CLASSES[mid](**params), y0=float(y0))


@dataclass(frozen=True)
class ConditionCheck:
    """One validity condition: name, outcome, and numeric slack.

    Slack is the signed distance into the feasible region (negative when
    violated); None for conditions without a natural scalar margin.
    """

    name: str
    satisfied: bool
    slack: float | None = None


@dataclass
class ValidityReport:
    valid: bool
    conditions: list
    notes: list = field(default_factory=list)

    def violated(self):
        return [c for c in self.conditions if not c.satisfied]


def _finite_check(params):
    vals = [getattr(params, f.name) for f in fields(params)]
    ok = all(isinstance(v, (int, float)) and math.isfinite(v) for v in vals)
    return ConditionCheck("all parameters finite", ok)


def _positive(name, value):
    return ConditionCheck(f"{name} > 0", value > 0.0, value)


def validate_params(spec):
    """Check the model's validity conditions.

    Returns a ValidityReport listing every condition with its numeric slack.
    Invalid parameters are a normal outcome (valid=False), not an error.
    """
    p = spec.params
    conds = [_finite_check(p)]
    notes = []

    if spec.model_id is ModelId.CIR:
        conds += [_positive(n, getattr(p, n)) for n in ("kappa", "theta", "sigma")]
        conds.append(
            ConditionCheck(
                "2*kappa*theta >= sigma^2",
                2.0 * p.kappa * p.theta >= p.sigma**2,
                2.0 * p.kappa * p.theta - p.sigma**2,
            )
        )
    elif spec.model_id is ModelId.CEV:
        conds += [_positive(n, getattr(p, n)) for n in ("kappa", "theta", "sigma")]
        conds.append(ConditionCheck("alpha > 1/2", p.alpha > 0.5, p.alpha - 0.5))
        conds.append(ConditionCheck("alpha < 1", p.alpha < 1.0, 1.0 - p.alpha))
    elif spec.model_id is ModelId.HESTON32:
        conds += [_positive(n, getattr(p, n)) for n in ("c1", "c2", "c3")]
    elif spec.model_id is ModelId.WRIGHT_FISHER:
        conds += [_positive(n, getattr(p, n)) for n in ("a", "b", "gamma")]
        g2 = p.gamma**2
        conds.append(ConditionCheck("2a/gamma^2 >= 1", 2.0 * p.a / g2 >= 1.0, 2.0 * p.a / g2 - 1.0))
        conds.append(
            ConditionCheck(
                "2(b-a)/gamma^2 >= 1",
                2.0 * (p.b - p.a) / g2 >= 1.0,
                2.0 * (p.b - p.a) / g2 - 1.0,
            )
        )
    elif spec.model_id is ModelId.AIT_SAHALIA:
        conds += [
            _positive(n, getattr(p, n))
            for n in ("alpha_m1", "alpha_0", "alpha_1", "alpha_2", "sigma")
        ]
        conds.append(ConditionCheck("r > 1", p.r > 1.0, p.r - 1.0))
        conds.append(ConditionCheck("rho > 1", p.rho > 1.0, p.rho - 1.0))
        if p.critical:
            conds.append(ConditionCheck("critical case (r=2, rho=3/2)", True, 0.0))
            notes.append("critical case")
        else:
            conds.append(ConditionCheck("r + 1 > 2*rho", p.r + 1.0 > 2.0 * p.rho, p.r + 1.0 - 2.0 * p.rho))
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unknown model {spec.model_id}")

    l, r = spec.domain
    y0_slack = spec.y0 - l if math.isinf(r) else min(spec.y0 - l, r - spec.y0)
    conds.append(
        ConditionCheck(
            "initial value inside domain",
            math.isfinite(spec.y0) and l < spec.y0 < r,
            y0_slack,
        )
    )

    # A non-finite parameter poisons the numeric conditions; fail wholesale.
    if not conds[0].satisfied:
        return ValidityReport(False, conds, notes)
    return ValidityReport(all(c.satisfied for c in conds), conds, notes)


def max_strong_order_p(spec):
    """Supremum of p for which order-one L^p strong convergence is guaranteed.

    Returns math.inf where the guarantee holds for every p >= 1 (CEV and
    non-critical AitSahalia). The bound is an open threshold: requesting
    error estimation at p at or above it is flagged, not refused.
    """
    report = validate_params(spec)
    if not report.valid:
        names = ", ".join(c.name for c in report.violated())
        raise InvalidParamsError(f"invalid {spec.model_id.value} parameters: {names}")
    p = spec.params
    if spec.model_id is ModelId.CIR:
        return (4.0 / 3.0) * p.kappa * p.theta / p.sigma**2
    if spec.model_id is ModelId.CEV:
        return math.inf
    if spec.model_id is ModelId.HESTON32:
        return 1.0 / 3.0 + p.c1 / (3.0 * p.c3**2)
    if spec.model_id is ModelId.WRIGHT_FISHER:
        return 4.0 / (3.0 * p.gamma**2) * min(p.a, p.b - p.a)
    if p.critical:
        return 1.0 / 3.0 + p.alpha_2 / (3.0 * p.sigma**2)
    return math.inf


# --- coefficient tables -----------------------------------------------------
#
# Drifts are power sums a(y) = sum_j c_j y^(e_j). Diffusions are either a
# single power b(y) = s y^e (kind 0) or gamma*sqrt(y(1-y)) (kind 1).

DIFF_POWER = 0
DIFF_WF = 1


def original_coeff_table(spec):
    """(a_coefs, a_exps, b_kind, b_coef, b_exp, lo, hi) for the original SDE."""
    p = spec.params
    lo, hi = spec.domain
    if spec.model_id is ModelId.CIR:
        a = ([p.kappa * p.theta, -p.kappa], [0.0, 1.0])
        b = (DIFF_POWER, p.sigma, 0.5)
    elif spec.model_id is ModelId.CEV:
        a = ([p.kappa * p.theta, -p.kappa], [0.0, 1.0])
        b = (DIFF_POWER, p.sigma, p.alpha)
    elif spec.model_id is ModelId.HESTON32:
        a = ([p.c1 * p.c2, -p.c1], [1.0, 2.0])
        b = (DIFF_POWER, p.c3, 1.5)
    elif spec.model_id is ModelId.WRIGHT_FISHER:
        a = ([p.a, -p.b], [0.0, 1.0])
        b = (DIFF_WF, p.gamma, 0.0)
    elif spec.model_id is ModelId.AIT_SAHALIA:
        a = ([p.alpha_m1, -p.alpha_0, p.alpha_1, -p.alpha_2], [-1.0, 0.0, 1.0, p.r])
        b = (DIFF_POWER, p.sigma, p.rho)
    else:  # pragma: no cover
        raise ValueError(f"unknown model {spec.model_id}")
    coefs = np.asarray(a[0], dtype=np.float64)
    exps = np.asarray(a[1], dtype=np.float64)
    return coefs, exps, b[0], float(b[1]), float(b[2]), lo, hi


def _check_in_domain(spec, y):
    lo, hi = spec.domain
    arr = np.asarray(y, dtype=np.float64)
    bad = ~((arr > lo) & (arr < hi))
    if np.any(bad):
        idx = int(np.argmax(bad)) if arr.ndim else None
        val = float(arr.flat[np.argmax(bad)]) if arr.size else float(arr)
        raise DomainError(
            f"value {val!r} outside open domain ({lo}, {hi}) of {spec.model_id.value}",
            index=idx,
            value=val,
        )
    return arr


def drift(spec, y):
    """Original drift a(y). Accepts scalars or arrays; y must be in the domain."""
    arr = _check_in_domain(spec, y)
    coefs, exps, *_ = original_coeff_table(spec)
    out = sum(c * arr**e for c, e in zip(coefs, exps))
    return float(out) if np.isscalar(y) or np.ndim(y) == 0 else out


def diffusion(spec, y):
    """Original diffusion b(y) > 0 on the open domain."""
    arr = _check_in_domain(spec, y)
    _, _, kind, coef, exp, *_ = original_coeff_table(spec)
    if kind == DIFF_WF:
        out = coef * np.sqrt(arr * (1.0 - arr))
    else:
        out = coef * arr**exp
    return float(out) if np.isscalar(y) or np.ndim(y) == 0 else out
