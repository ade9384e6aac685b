#!/usr/bin/env python3
"""Wall-clock comparison of the compiled and pure-Python stepping kernels.

Loads both copies of the kernel module (numba @njit and plain Python — the
fallback behind LAMPSDE_JIT=0), runs identical path blocks through each, and
prints timings plus the worst trajectory discrepancy between modes.

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --paths 64 --steps 8192 --repeat 5
"""

import argparse
import time

import numpy as np

from lampsde._kernels import load_kernels
from lampsde.brownian import GridSpec, sample_increments_block
from lampsde.models import make_spec
from lampsde.transform import transform


def time_best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bem_runner(kern, tm, dws, dt):
    n = dws.shape[0]
    states = np.empty((n, dws.shape[1] + 1))
    statuses = np.empty(n, dtype=np.int64)
    bad = np.empty(n, dtype=np.int64)
    evals = np.empty(n, dtype=np.int64)
    nprec = np.empty(n, dtype=np.int64)
    alpha, beta = tm.domain

    def run():
        kern.bem_block(
            tm.drift_kind, tm.drift_coefs, tm.drift_exps, alpha, beta,
            tm.uses_quad_step(), tm.x0, dt, tm.noise_signed, dws,
            1e-12, 100, 1, states, statuses, bad, evals, nprec,
        )
        return states

    return run


def milstein_runner(kern, params, y0, dws, dt):
    n = dws.shape[0]
    states = np.empty((n, dws.shape[1] + 1))
    bad = np.empty(n, dtype=np.int64)

    def run():
        kern.milstein_cir_block(params.kappa, params.theta, params.sigma,
                                y0, dt, dws, states, bad)
        return states

    return run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=32)
    ap.add_argument("--steps", type=int, default=2048)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    jit = load_kernels(True)
    py = load_kernels(False)
    if not jit.JIT_ENABLED:
        print("numba unavailable; nothing to compare")
        return

    grid = GridSpec(T=1.0, dt=1.0 / args.steps)
    dws = sample_increments_block(grid, 0, range(args.paths))

    cir = make_spec("CIR", 0.125, kappa=2.0, theta=0.125, sigma=0.5)
    wf = make_spec("WrightFisher", 0.5, a=1.0, b=2.0, gamma=1.0)
    cases = [
        ("cir bem (closed form)", lambda k: bem_runner(k, transform(cir), dws, grid.dt)),
        ("wright-fisher bem (newton)", lambda k: bem_runner(k, transform(wf), dws, grid.dt)),
        ("cir milstein", lambda k: milstein_runner(k, cir.params, cir.y0, dws, grid.dt)),
    ]

    print(f"{args.paths} paths x {args.steps} steps, best of {args.repeat}")
    print(f"{'kernel':<28} {'jit':>10} {'python':>10} {'speedup':>8} {'max |diff|':>12}")
    for name, make in cases:
        run_jit = make(jit)
        run_py = make(py)
        run_jit()  # compile outside the timed region
        t_jit = time_best(run_jit, args.repeat)
        out_jit = run_jit().copy()
        t_py = time_best(run_py, args.repeat)
        out_py = run_py()
        diff = float(np.max(np.abs(out_jit - out_py)))
        print(f"{name:<28} {t_jit:>9.4f}s {t_py:>9.4f}s {t_py / t_jit:>7.1f}x {diff:>12.3e}")


if __name__ == "__main__":
    main()
