"""Experiment configuration: INI-style text, parsed and validated.

A config has five sections. Only [model] and [grid] are required; the rest
fall back to defaults:

    [model]
    id = CIR                ; CIR, CEV, Heston32, WrightFisher, AitSahalia
    y0 = 0.125
    kappa = 2.0             ; remaining keys are the model's parameters
    theta = 0.125
    sigma = 0.5

    [grid]
    T = 1.0
    dt-ref = 2^-15          ; reference step; 2^-15 and 2**-15 both parse
    dt-ladder = 2^-11, 2^-10, 2^-9, 2^-8
    dt = 2^-8               ; simulation step (default: dt-ref)

    [scheme]
    id = bem                ; comma list allowed for `simulate`
    residual-tol = 1e-12
    max-iterations = 100
    eta = 0.5

    [monte-carlo]
    n-paths = 1000
    seed-stream = 0
    metric = endpoint-Lp    ; or max-grid-Lp
    p = 2

    [output]
    directory = out
    formats = csv, json

Ladder entries must be dyadic multiples of dt-ref (the coupling coarsens
reference increments by powers of two). parse -> serialize -> parse is the
identity on the resolved ExperimentConfig.
"""

import configparser
import dataclasses
import math

from .errorlab import Metric
from .errors import ConfigError
from .models import _PARAM_CLASSES, ModelId, make_spec
from .schemes import SchemeId
from .stepping import StepSolverConfig

_FORMATS = ("csv", "json")
_REQUIRED = object()


def parse_real(text):
    """Float with optional power notation: '2^-15', '2**-15', '0.5'."""
    t = text.strip()
    for sep in ("**", "^"):
        if sep in t:
            base, _, expo = t.partition(sep)
            return float(base) ** float(expo)
    return float(t)


def fmt_step(x):
    """Format a step size, preferring exact dyadic notation (2^-15)."""
    if x > 0.0 and math.isfinite(x):
        l = math.log2(x)
        if l == int(l) and l != 0.0:
            return f"2^{int(l)}"
    return f"{x:.17g}"


def _fmt(x):
    return f"{x:.17g}"


def _parse_list(text):
    return [s.strip() for s in text.split(",") if s.strip()]


def _get(cp, sec, key, default=_REQUIRED, conv=str):
    if not cp.has_option(sec, key):
        if default is _REQUIRED:
            raise ConfigError(f"[{sec}] missing required key '{key}'")
        return default
    raw = cp.get(sec, key)
    try:
        return conv(raw)
    except (ValueError, ArithmeticError) as exc:
        raise ConfigError(f"[{sec}] {key} = {raw!r}: {exc}") from exc


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    spec: object           # ModelSpec
    T: float
    dt_ref: float
    dt_ladder: tuple       # ascending dyadic multiples of dt_ref
    dt_sim: float          # step used by `simulate`
    scheme_ids: tuple      # SchemeId, at least one
    solver: StepSolverConfig
    n_paths: int
    seed_stream: int
    metric: Metric
    p: float
    out_dir: str | None
    formats: tuple


def _build_spec(cp):
    if not cp.has_section("model"):
        raise ConfigError("missing required section [model]")
    try:
        mid = ModelId(_get(cp, "model", "id"))
    except ValueError as exc:
        choices = ", ".join(m.value for m in ModelId)
        raise ConfigError(f"[model] id: {exc}; choices: {choices}") from exc
    y0 = _get(cp, "model", "y0", conv=parse_real)
    params = {
        k: _get(cp, "model", k, conv=parse_real)
        for k in cp.options("model")
        if k not in ("id", "y0")
    }
    try:
        return make_spec(mid, y0, **params)
    except TypeError as exc:
        expected = ", ".join(f.name for f in dataclasses.fields(_PARAM_CLASSES[mid]))
        raise ConfigError(
            f"[model] parameters for {mid.value}: {exc}; expected keys: {expected}"
        ) from exc


def _check_ladder_entry(dt, dt_ref):
    r = dt / dt_ref
    m = int(round(r))
    if m < 1 or abs(r - m) > 1e-9 * m or (m & (m - 1)):
        raise ConfigError(
            f"[grid] dt-ladder entry {fmt_step(dt)} is not a dyadic multiple "
            f"of dt-ref = {fmt_step(dt_ref)}"
        )


def build_config(cp):
    """Resolve a ConfigParser into a validated ExperimentConfig."""
    spec = _build_spec(cp)

    if not cp.has_section("grid"):
        raise ConfigError("missing required section [grid]")
    T = _get(cp, "grid", "T", conv=parse_real)
    dt_ref = _get(cp, "grid", "dt-ref", conv=parse_real)
    if not (T > 0.0 and dt_ref > 0.0 and dt_ref <= T):
        raise ConfigError(f"[grid] needs 0 < dt-ref <= T, got dt-ref={dt_ref}, T={T}")
    ladder_raw = _get(cp, "grid", "dt-ladder", default="")
    try:
        ladder = tuple(sorted(parse_real(s) for s in _parse_list(ladder_raw)))
    except ValueError as exc:
        raise ConfigError(f"[grid] dt-ladder = {ladder_raw!r}: {exc}") from exc
    if len(set(ladder)) != len(ladder):
        raise ConfigError("[grid] dt-ladder has duplicate entries")
    for dt in ladder:
        if not dt <= T:
            raise ConfigError(f"[grid] dt-ladder entry {fmt_step(dt)} exceeds T={T}")
        _check_ladder_entry(dt, dt_ref)
    dt_sim = _get(cp, "grid", "dt", default=dt_ref, conv=parse_real)
    if not (0.0 < dt_sim <= T):
        raise ConfigError(f"[grid] needs 0 < dt <= T, got dt={dt_sim}")

    scheme_ids = []
    for s in _parse_list(_get(cp, "scheme", "id", default="bem")):
        try:
            scheme_ids.append(SchemeId(s))
        except ValueError as exc:
            choices = ", ".join(m.value for m in SchemeId)
            raise ConfigError(f"[scheme] id: {exc}; choices: {choices}") from exc
    if not scheme_ids:
        raise ConfigError("[scheme] id must name at least one scheme")
    defaults = StepSolverConfig()
    try:
        solver = StepSolverConfig(
            residual_tol=_get(cp, "scheme", "residual-tol",
                              default=defaults.residual_tol, conv=parse_real),
            max_iterations=_get(cp, "scheme", "max-iterations",
                                default=defaults.max_iterations, conv=int),
            eta=_get(cp, "scheme", "eta", default=defaults.eta, conv=parse_real),
        )
    except ValueError as exc:
        raise ConfigError(f"[scheme] {exc}") from exc

    n_paths = _get(cp, "monte-carlo", "n-paths", default=1000, conv=int)
    if n_paths < 1:
        raise ConfigError(f"[monte-carlo] n-paths must be positive, got {n_paths}")
    seed_stream = _get(cp, "monte-carlo", "seed-stream", default=0, conv=int)
    if not 0 <= seed_stream < 2**64:
        raise ConfigError(f"[monte-carlo] seed-stream must fit in uint64, got {seed_stream}")
    try:
        metric = Metric(_get(cp, "monte-carlo", "metric", default=Metric.ENDPOINT_LP.value))
    except ValueError as exc:
        choices = ", ".join(m.value for m in Metric)
        raise ConfigError(f"[monte-carlo] metric: {exc}; choices: {choices}") from exc
    p = _get(cp, "monte-carlo", "p", default=2.0, conv=parse_real)
    if not p >= 1.0:
        raise ConfigError(f"[monte-carlo] p must be >= 1, got {p}")

    out_dir = _get(cp, "output", "directory", default=None)
    formats = tuple(_get(cp, "output", "formats", default=["csv", "json"], conv=_parse_list))
    for f in formats:
        if f not in _FORMATS:
            raise ConfigError(f"[output] unknown format {f!r}; choices: csv, json")
    if not formats:
        raise ConfigError("[output] formats must name at least one of csv, json")

    return ExperimentConfig(
        spec=spec, T=T, dt_ref=dt_ref, dt_ladder=ladder, dt_sim=dt_sim,
        scheme_ids=tuple(scheme_ids), solver=solver, n_paths=n_paths,
        seed_stream=seed_stream, metric=metric, p=p, out_dir=out_dir,
        formats=formats,
    )


def apply_overrides(cp, pairs):
    """Apply 'section.key=value' override strings to a raw parser."""
    for item in pairs:
        head, eq, value = item.partition("=")
        sec, dot, key = head.partition(".")
        sec, key = sec.strip(), key.strip()
        if not eq or not dot or not sec or not key:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp.set(sec, key, value.strip())


def _read_raw(text):
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    return cp


def parse_config(text, overrides=()):
    cp = _read_raw(text)
    apply_overrides(cp, overrides)
    return build_config(cp)


def load_config(path, overrides=()):
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config(text, overrides)


def serialize_config(cfg):
    """Canonical INI text; parse(serialize(cfg)) resolves back to cfg."""
    lines = ["[model]", f"id = {cfg.spec.model_id.value}", f"y0 = {_fmt(cfg.spec.y0)}"]
    for f in dataclasses.fields(cfg.spec.params):
        lines.append(f"{f.name} = {_fmt(getattr(cfg.spec.params, f.name))}")
    lines += [
        "",
        "[grid]",
        f"T = {_fmt(cfg.T)}",
        f"dt-ref = {fmt_step(cfg.dt_ref)}",
    ]
    if cfg.dt_ladder:
        lines.append("dt-ladder = " + ", ".join(fmt_step(dt) for dt in cfg.dt_ladder))
    lines.append(f"dt = {fmt_step(cfg.dt_sim)}")
    lines += [
        "",
        "[scheme]",
        "id = " + ", ".join(s.value for s in cfg.scheme_ids),
        f"residual-tol = {_fmt(cfg.solver.residual_tol)}",
        f"max-iterations = {cfg.solver.max_iterations}",
        f"eta = {_fmt(cfg.solver.eta)}",
        "",
        "[monte-carlo]",
        f"n-paths = {cfg.n_paths}",
        f"seed-stream = {cfg.seed_stream}",
        f"metric = {cfg.metric.value}",
        f"p = {_fmt(cfg.p)}",
        "",
        "[output]",
    ]
    if cfg.out_dir is not None:
        lines.append(f"directory = {cfg.out_dir}")
    lines.append("formats = " + ", ".join(cfg.formats))
    return "\n".join(lines) + "\n"


def default_config_text():
    """A ready-to-run convergence study on the reference CIR setup."""
    return "\n".join([
        "[model]",
        "id = CIR",
        "y0 = 0.125",
        "kappa = 2.0",
        "theta = 0.125",
        "sigma = 0.5",
        "",
        "[grid]",
        "T = 1.0",
        "dt-ref = 2^-15",
        "dt-ladder = 2^-11, 2^-10, 2^-9, 2^-8",
        "dt = 2^-8",
        "",
        "[scheme]",
        "id = bem",
        "",
        "[monte-carlo]",
        "n-paths = 1000",
        "seed-stream = 0",
        "metric = endpoint-Lp",
        "p = 2",
        "",
        "[output]",
        "formats = csv, json",
        "",
    ])
