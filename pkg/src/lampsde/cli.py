"""Command-line front end.

    lampsde check config.ini
    lampsde simulate config.ini --set monte-carlo.n-paths=3
    lampsde converge config.ini --workers 4
    lampsde compare config.ini
    lampsde self-test        (equivalently: lampsde --self-test)

Any config key can be overridden from the command line with repeated
`--set section.key=value` flags. Reports land in --output-dir, falling back
to the config's [output] directory, then the LAMPSDE_OUTPUT_DIR environment
variable, then the working directory.

Exit codes: 0 success, 2 config invalid, 3 inadmissible step, 4 solver or
domain failure, 5 I/O failure.
"""

import argparse
import dataclasses
import json
import math
import os
import sys

import numpy as np

from .brownian import GridSpec, coarsen_increments, sample_path
from .config import default_config_text, fmt_step, load_config
from .errorlab import (
    ErrorEstimate,
    Metric,
    compare_milstein_lbe,
    comparison_to_dict,
    convergence_study,
    fit_convergence,
    write_estimates_csv,
    write_loglog_csv,
    write_report_json,
)
from .errors import (
    EXIT_CONFIG_INVALID,
    EXIT_INADMISSIBLE_STEP,
    EXIT_IO_FAILURE,
    EXIT_OK,
    ConfigError,
    LampSdeError,
)
from .models import ModelId, max_strong_order_p, validate_params
from .schemes import SchemeId, run_bem, run_explicit_em, run_lbe, run_milstein_cir, write_trajectory_csv
from .stepping import admissible_step, cir_step_closed_form, milstein_cir_step, solve_implicit
from .transform import transform


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="lampsde",
        description="Domain-preserving strong approximation of scalar SDEs "
        "(Lamperti transform + backward Euler) with a Monte Carlo "
        "convergence harness.",
    )
    parser.add_argument("--self-test", action="store_true",
                        help="run the built-in deterministic checks and exit")
    sub = parser.add_subparsers(dest="command")

    def add(name, help_text, needs_config=True):
        p = sub.add_parser(name, help=help_text)
        if needs_config:
            p.add_argument("config", help="experiment config file (INI)")
            p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                           help="override a config key (repeatable)")
            p.add_argument("--workers", type=int, default=1,
                           help="parallel path-block workers (default 1; output "
                                "is identical for every setting)")
            p.add_argument("--output-dir", default=None,
                           help="directory for reports (overrides config/env)")
        return p

    add("check", "validate parameters, thresholds, and step admissibility")
    add("simulate", "run trajectories and write CSV files")
    add("converge", "strong-error ladder vs fine reference + log-log fit")
    add("compare", "drift-implicit Milstein vs LBE gaps for CIR")
    add("self-test", "deterministic built-in checks (no Monte Carlo)", needs_config=False)
    sub.add_parser("example-config", help="print a ready-to-run config to stdout")
    return parser


def _load(args):
    return load_config(args.config, overrides=args.set)


def _out_dir(args, cfg):
    d = args.output_dir or cfg.out_dir or os.environ.get("LAMPSDE_OUTPUT_DIR") or "."
    os.makedirs(d, exist_ok=True)
    return d


def cmd_check(cfg, out):
    spec = cfg.spec
    report = validate_params(spec)
    print(f"model {spec.model_id.value}, y0 = {spec.y0:g}", file=out)
    for c in report.conditions:
        mark = "ok  " if c.satisfied else "FAIL"
        slack = f"  (slack {c.slack:+.6g})" if c.slack is not None else ""
        print(f"  {mark} {c.name}{slack}", file=out)
    for note in report.notes:
        print(f"  note {note}", file=out)
    if not report.valid:
        print("configuration invalid", file=out)
        return EXIT_CONFIG_INVALID

    if spec.model_id is ModelId.CIR:
        print(f"  2*kappa*theta/sigma^2 = {spec.params.feller_ratio:.6g}", file=out)
    thr = max_strong_order_p(spec)
    print(f"  strong order one guaranteed for p < {thr:g}", file=out)

    tm = transform(spec)
    all_ok = True
    steps = sorted({cfg.dt_ref, cfg.dt_sim, *cfg.dt_ladder})
    for dt in steps:
        ok = admissible_step(tm.K, dt, cfg.solver.eta)
        all_ok &= ok
        mark = "ok  " if ok else "FAIL"
        print(
            f"  {mark} dt = {fmt_step(dt)} admissible "
            f"(2*max(0,K)*dt = {2.0 * max(0.0, tm.K) * dt:.6g} < eta = {cfg.solver.eta:g})",
            file=out,
        )
    if not all_ok:
        print("inadmissible step size(s)", file=out)
        return EXIT_INADMISSIBLE_STEP
    print("configuration valid", file=out)
    return EXIT_OK


def _run_scheme(cfg, scheme_id, grid, path):
    if scheme_id is SchemeId.BEM:
        return run_bem(transform(cfg.spec), grid, path, cfg.solver)
    if scheme_id is SchemeId.LBE:
        return run_lbe(cfg.spec, grid, path, cfg.solver)
    if scheme_id is SchemeId.MILSTEIN_CIR:
        if cfg.spec.model_id is not ModelId.CIR:
            raise ConfigError("[scheme] milstein-cir only applies to the CIR model")
        return run_milstein_cir(cfg.spec.params, grid, path, cfg.spec.y0)
    return run_explicit_em(cfg.spec, grid, path)


def cmd_simulate(cfg, out_dir, out):
    """One CSV per path, one state column per configured scheme.

    All schemes in a file share the same Brownian path, so coupled
    properties (e.g. Milstein >= LBE for CIR) hold row by row. The bem
    column is in transformed coordinates; lbe/milstein-cir/explicit-em are
    in original coordinates.
    """
    grid = GridSpec(cfg.T, cfg.dt_sim)
    for i in range(cfg.n_paths):
        path = sample_path(grid, (cfg.seed_stream, i))
        columns = {}
        for sid in cfg.scheme_ids:
            run = _run_scheme(cfg, sid, grid, path)
            columns[sid.value] = run.states
            if run.violation is not None:
                print(
                    f"path {i}: {sid.value} left the domain at step "
                    f"{run.violation.step_index} (value {run.violation.value:.6g})",
                    file=out,
                )
        name = os.path.join(out_dir, f"trajectory-s{cfg.seed_stream}-p{i}.csv")
        with open(name, "w", encoding="utf-8") as f:
            write_trajectory_csv(f, grid, columns)
        print(f"wrote {name}", file=out)
    return EXIT_OK


def cmd_converge(cfg, out_dir, workers, out):
    if len(cfg.scheme_ids) != 1:
        raise ConfigError("[scheme] converge needs exactly one scheme id")
    if len(cfg.dt_ladder) < 3:
        raise ConfigError("[grid] converge needs a dt-ladder with at least 3 entries")
    report = convergence_study(
        cfg.spec, cfg.scheme_ids[0], cfg.dt_ladder, cfg.dt_ref, cfg.metric, cfg.p,
        cfg.n_paths, cfg.seed_stream, T=cfg.T, cfg=cfg.solver, workers=workers,
    )
    for e in report.estimates:
        flag = f"  [{'; '.join(e.flags)}]" if e.flags else ""
        print(
            f"dt = {fmt_step(e.dt):>7s}  value = {e.value:.6e}  "
            f"std-error = {e.std_error:.3e}{flag}",
            file=out,
        )
    print(
        f"slope q = {report.slope:.4f}  intercept logC = {report.intercept:.4f}  "
        f"residual = {report.residual:.3e} (sum sq), {report.residual_rms:.3e} (rms)",
        file=out,
    )
    if "csv" in cfg.formats:
        for name, writer in (
            ("converge-estimates.csv", lambda f: write_estimates_csv(f, report.estimates)),
            ("converge-loglog.csv", lambda f: write_loglog_csv(f, report)),
        ):
            path = os.path.join(out_dir, name)
            with open(path, "w", encoding="utf-8") as f:
                writer(f)
            print(f"wrote {path}", file=out)
    if "json" in cfg.formats:
        path = os.path.join(out_dir, "converge-report.json")
        with open(path, "w", encoding="utf-8") as f:
            write_report_json(f, report, extra=_context(cfg))
        print(f"wrote {path}", file=out)
    return EXIT_OK


def _context(cfg):
    return {
        "model": cfg.spec.model_id.value,
        "params": dataclasses.asdict(cfg.spec.params),
        "y0": cfg.spec.y0,
        "scheme": cfg.scheme_ids[0].value,
        "metric": cfg.metric.value,
        "p": cfg.p,
        "T": cfg.T,
        "dt-ref": cfg.dt_ref,
        "n-paths": cfg.n_paths,
        "seed-stream": cfg.seed_stream,
    }


def cmd_compare(cfg, out_dir, workers, out):
    if cfg.spec.model_id is not ModelId.CIR:
        raise ConfigError("[model] compare needs the CIR model")
    if len(cfg.dt_ladder) < 2:
        raise ConfigError("[grid] compare needs a dt-ladder with at least 2 entries")
    comp = compare_milstein_lbe(
        cfg.spec.params, cfg.spec.y0, cfg.T, cfg.dt_ladder, cfg.n_paths,
        cfg.seed_stream, dt_ref=cfg.dt_ref, cfg=cfg.solver, workers=workers,
    )
    rel = ">" if comp.regime_ok else "<="
    print(f"kappa*theta/sigma^2 = {comp.regime_ratio:.6g} {rel} 3/2", file=out)
    for w in comp.warnings:
        print(f"warning: {w}", file=out)
    for l1, sup in zip(comp.l1_grid_gap, comp.sup_l2_gap):
        print(
            f"dt = {fmt_step(l1.dt):>7s}  sup_k E|Z-Y| = {l1.value:.6e}  "
            f"E sup_k |yref-Z|^2 = {sup.value:.6e}",
            file=out,
        )
    print(
        f"L1-grid-gap slope = {comp.l1_slope:.4f}  sup-L2-gap slope = {comp.sup_l2_slope:.4f}",
        file=out,
    )
    if "csv" in cfg.formats:
        path = os.path.join(out_dir, "compare-gaps.csv")
        with open(path, "w", encoding="utf-8") as f:
            write_estimates_csv(f, list(comp.l1_grid_gap) + list(comp.sup_l2_gap))
        print(f"wrote {path}", file=out)
    if "json" in cfg.formats:
        path = os.path.join(out_dir, "compare-report.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump(comparison_to_dict(comp), f, indent=2)
            f.write("\n")
        print(f"wrote {path}", file=out)
    return EXIT_OK


def cmd_self_test(out):
    """Deterministic smoke checks: no Monte Carlo, runs in well under a second."""
    from .models import make_spec

    failures = []

    def check(name, ok, detail=""):
        line = f"self-test: {name}: {'ok' if ok else 'FAIL'}"
        if detail and not ok:
            line += f" ({detail})"
        print(line, file=out)
        if not ok:
            failures.append(name)

    # exact power law in, exact fit out
    dts = [2.0**-k for k in range(4, 8)]
    ests = [ErrorEstimate(dt, Metric.ENDPOINT_LP, 2.0, 3.0 * dt**2, 1, 0.0) for dt in dts]
    rep = fit_convergence(ests)
    check(
        "power-law fit",
        abs(rep.slope - 2.0) < 1e-12
        and abs(rep.intercept - math.log(3.0)) < 1e-12
        and rep.residual < 1e-12,
        f"slope={rep.slope!r} logC={rep.intercept!r} residual={rep.residual!r}",
    )

    spec = make_spec("CIR", 0.125, kappa=2.0, theta=0.125, sigma=0.5)
    params = spec.params
    tm = transform(spec)
    dt = 2.0**-8

    # dw = 0 must hold the transformed drift's zero fixed
    xstar = math.sqrt(params.theta_v)
    x1 = cir_step_closed_form(params, dt, xstar, 0.0)
    check("closed-form fixed point", abs(x1 - xstar) <= 1e-14 * xstar, f"x1={x1!r}")
    x1i = solve_implicit(tm, dt, xstar, xstar)
    check("iterative fixed point", abs(x1i - xstar) <= 1e-12 * xstar, f"x1={x1i!r}")

    zstar = params.theta - params.sigma**2 / (4.0 * params.kappa)
    z1 = milstein_cir_step(params, dt, zstar, 0.0)
    check("milstein fixed point", abs(z1 - zstar) <= 1e-14 * zstar, f"z1={z1!r}")

    # closed-form and iterative solves agree on the same implicit equation
    worst = 0.0
    for xk, dw in ((0.35, 0.01), (0.35, -0.02), (0.02, -0.05), (1.7, 0.3)):
        closed = cir_step_closed_form(params, dt, xk, dw)
        c = xk + 0.5 * params.sigma * dw
        iterative = solve_implicit(tm, dt, c, xk)
        worst = max(worst, abs(closed - iterative) / max(1.0, abs(c)))
    check("closed vs iterative step", worst <= 1e-10, f"worst scaled diff {worst:.3e}")

    # implicit solve drives the residual to scaled tolerance (cot/tan drift)
    wf = transform(make_spec("WrightFisher", 0.5, a=1.0, b=2.0, gamma=1.0))
    worst = 0.0
    for c in (0.4, 1.2, 2.6):
        x = solve_implicit(wf, dt, c, c)
        worst = max(worst, abs(x - wf.f(x) * dt - c) / max(1.0, abs(c)))
    check("implicit residual", worst <= 1e-12, f"worst scaled residual {worst:.3e}")

    # dyadic coarsening is associative to the bit
    inc = np.linspace(-1.0, 1.0, 64) ** 3
    a = coarsen_increments(coarsen_increments(inc, 2), 4)
    b = coarsen_increments(inc, 8)
    check("coarsening associativity", np.array_equal(a, b))

    if failures:
        print(f"self-test: {len(failures)} failure(s)", file=out)
        return 1
    print("self-test: all checks passed", file=out)
    return EXIT_OK


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    command = args.command
    if command is None:
        if args.self_test:
            command = "self-test"
        else:
            parser.print_help(sys.stderr)
            return EXIT_CONFIG_INVALID
    out = sys.stdout
    try:
        if command == "self-test":
            return cmd_self_test(out)
        if command == "example-config":
            out.write(default_config_text())
            return EXIT_OK
        cfg = _load(args)
        if command == "check":
            return cmd_check(cfg, out)
        out_dir = _out_dir(args, cfg)
        if command == "simulate":
            return cmd_simulate(cfg, out_dir, out)
        if command == "converge":
            return cmd_converge(cfg, out_dir, args.workers, out)
        return cmd_compare(cfg, out_dir, args.workers, out)
    except LampSdeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO_FAILURE


if __name__ == "__main__":
    sys.exit(main())
