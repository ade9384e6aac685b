"""Implicit step solver: admissibility, residuals, closed forms, failure modes."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lampsde import (
    DEFAULT_CONFIG,
    DomainError,
    InadmissibleStepError,
    NoConvergenceError,
    StepSolverConfig,
    admissible_step,
    cir_step_closed_form,
    make_spec,
    milstein_cir_step,
    solve_implicit,
)
from lampsde.transform import transform


def test_admissible_step_rule():
    assert admissible_step(-5.0, 100.0)           # contractive drift: any dt
    assert admissible_step(0.0, 100.0)
    assert admissible_step(1.0, 0.24)             # 2*1*0.24 = 0.48 < 0.5
    assert not admissible_step(1.0, 0.25)         # 0.5 < 0.5 fails (strict)
    assert admissible_step(1.0, 0.4, eta=0.9)
    with pytest.raises(ValueError):
        admissible_step(1.0, 0.0)
    with pytest.raises(ValueError):
        admissible_step(1.0, -0.1)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        StepSolverConfig(residual_tol=0.0)
    with pytest.raises(ValueError):
        StepSolverConfig(eta=1.0)
    with pytest.raises(ValueError):
        StepSolverConfig(max_iterations=0)
    assert DEFAULT_CONFIG.residual_tol == 1e-12
    assert DEFAULT_CONFIG.eta == 0.5


def residual(tm, dt, c, x):
    return abs(x - tm.f(x) * dt - c) / max(1.0, abs(x) + abs(c))


def test_residual_within_tolerance(any_spec):
    """Deterministic sweep of (state, dw, dt) per model; scaled residual <= tol."""
    tm = transform(any_spec)
    lo, hi = tm.domain
    rng = np.random.default_rng(7)
    n = 500
    if math.isinf(hi):
        xs = np.exp(rng.uniform(np.log(1e-3), np.log(1e2), n))
    else:
        xs = rng.uniform(lo + 0.05, hi - 0.05, n)
    dts = np.exp(rng.uniform(np.log(2.0**-12), np.log(2.0**-4), n))
    dws = rng.standard_normal(n) * np.sqrt(dts)
    for x, dt, dw in zip(xs, dts, dws):
        c = x + tm.noise_signed * dw
        root = solve_implicit(tm, dt, c, x)
        assert lo < root < hi
        assert residual(tm, dt, c, root) <= DEFAULT_CONFIG.residual_tol


def test_fixed_point_when_c_matches(any_spec):
    """If c = x* - f(x*) dt exactly, the solver must return ~x*."""
    tm = transform(any_spec)
    lo, hi = tm.domain
    x_star = 0.8 if math.isinf(hi) else 0.5 * (lo + hi)
    dt = 2.0**-8
    c = x_star - tm.f(x_star) * dt
    root = solve_implicit(tm, dt, c, guess=x_star * 1.3)
    assert root == pytest.approx(x_star, rel=1e-10)


def test_solve_info_fields(cir_spec):
    tm = transform(cir_spec)
    x, info = solve_implicit(tm, 2.0**-8, 0.3, 0.35, full=True)
    assert x > 0.0
    assert info.evals >= 1
    assert info.bracket[0] <= x <= info.bracket[1]
    assert not info.at_precision_limit


def test_guess_must_be_interior(cir_spec):
    tm = transform(cir_spec)
    with pytest.raises(DomainError):
        solve_implicit(tm, 2.0**-8, 0.3, guess=-1.0)


def test_inadmissible_step_raises():
    # Large alpha_0 pushes sup f' well above zero, so K > 0 and coarse
    # steps get rejected before any solve is attempted.
    spec = make_spec("AitSahalia", 1.0, alpha_m1=0.01, alpha_0=5.0, alpha_1=0.1,
                     alpha_2=1.0, sigma=0.5, r=2.0, rho=1.5)
    tm = transform(spec)
    assert tm.K > 0.0
    with pytest.raises(InadmissibleStepError):
        solve_implicit(tm, 2.0**-4, 1.0, 1.0)
    # A fine enough step for the same model is accepted.
    dt_ok = 0.4 / (2.0 * tm.K)
    root = solve_implicit(tm, dt_ok, 1.0, 1.0)
    assert root > 0.0


def test_no_convergence_carries_bracket(wf_spec):
    tm = transform(wf_spec)
    tiny_budget = StepSolverConfig(max_iterations=1)
    with pytest.raises(NoConvergenceError) as exc:
        solve_implicit(tm, 2.0**-4, 2.5, guess=0.3, cfg=tiny_budget)
    lo, hi = exc.value.bracket
    assert lo <= hi


class TestClosedFormCIR:
    def setup_method(self):
        self.spec = make_spec("CIR", 0.125, kappa=2.0, theta=0.125, sigma=0.5)
        self.params = self.spec.params
        self.tm = transform(self.spec)

    def test_agrees_with_iterative(self):
        rng = np.random.default_rng(11)
        dt = 2.0**-8
        for _ in range(300):
            x = float(np.exp(rng.uniform(np.log(1e-3), np.log(1e2))))
            dw = float(rng.standard_normal()) * math.sqrt(dt)
            closed = cir_step_closed_form(self.params, dt, x, dw)
            iterative = solve_implicit(self.tm, dt, x + 0.5 * self.params.sigma * dw, x)
            assert abs(closed - iterative) <= 1e-10 * max(1.0, abs(closed))

    def test_positive_for_extreme_negative_increments(self):
        # c < 0 exercises the subtraction-free branch of the quadratic.
        x = cir_step_closed_form(self.params, 2.0**-4, 1e-8, dw=-50.0)
        assert x > 0.0
        assert residual(self.tm, 2.0**-4, 1e-8 + 0.5 * self.params.sigma * -50.0, x) <= 1e-12

    def test_solves_implicit_equation(self):
        dt = 2.0**-6
        for dw in (-0.3, -0.05, 0.0, 0.05, 0.3):
            x = cir_step_closed_form(self.params, dt, 0.35, dw)
            c = 0.35 + 0.5 * self.params.sigma * dw
            assert residual(self.tm, dt, c, x) <= 1e-12

    def test_input_validation(self):
        with pytest.raises(DomainError):
            cir_step_closed_form(self.params, 2.0**-8, 0.0, 0.1)
        with pytest.raises(ValueError):
            cir_step_closed_form(self.params, 0.0, 0.3, 0.1)

    @settings(max_examples=200, deadline=None)
    @given(x=st.floats(1e-6, 1e4), dw=st.floats(-10.0, 10.0),
           k=st.integers(2, 12))
    def test_always_positive(self, x, dw, k):
        assert cir_step_closed_form(self.params, 2.0**-k, x, dw) > 0.0


class TestMilsteinStep:
    def setup_method(self):
        self.params = make_spec("CIR", 0.125, kappa=2.0, theta=0.125, sigma=0.5).params

    def test_formula(self):
        z, dw, dt = 0.2, 0.03, 2.0**-6
        p = self.params
        want = (z + p.kappa * p.theta * dt + p.sigma * math.sqrt(z) * dw
                + 0.25 * p.sigma**2 * (dw * dw - dt)) / (1.0 + p.kappa * dt)
        assert milstein_cir_step(p, dt, z, dw) == want

    def test_input_validation(self):
        with pytest.raises(DomainError):
            milstein_cir_step(self.params, 2.0**-8, -0.1, 0.0)
        with pytest.raises(ValueError):
            milstein_cir_step(self.params, -1.0, 0.2, 0.0)

    @settings(max_examples=300, deadline=None)
    @given(x=st.floats(1e-6, 1e3), dw=st.floats(-5.0, 5.0), k=st.integers(2, 12))
    def test_dominates_squared_bem_step(self, x, dw, k):
        """One shared-increment step from Z = X^2 keeps Z' >= X'^2 (4-ulp slack)."""
        dt = 2.0**-k
        xp = cir_step_closed_form(self.params, dt, x, dw)
        zp = milstein_cir_step(self.params, dt, x * x, dw)
        slack = 4.0 * np.spacing(max(zp, xp * xp))
        assert zp - xp * xp >= -slack

    def test_stays_positive_on_long_path(self):
        rng = np.random.default_rng(3)
        dt = 2.0**-8
        z = 0.125
        for dw in rng.standard_normal(4096) * math.sqrt(dt):
            z = milstein_cir_step(self.params, dt, z, float(dw))
            assert z > 0.0
