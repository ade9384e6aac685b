"""Monte Carlo error lab: exactness invariants, determinism, fit recovery.

Statistical assertions in this file are deliberately coarse (pinned seeds,
small path counts); the full-scale tolerance checks live in the acceptance
suite.
"""

import io
import json
import math

import numpy as np
import pytest

from lampsde import (
    CIRParams,
    ConvergenceReport,
    ErrorEstimate,
    GridSpec,
    InadmissibleStepError,
    InvalidParamsError,
    Metric,
    SchemeId,
    compare_milstein_lbe,
    convergence_study,
    estimate_strong_error,
    fit_convergence,
    make_spec,
    moment_finite_range,
    moment_monitor,
)
from lampsde.errorlab import (
    comparison_to_dict,
    estimate_to_dict,
    report_to_dict,
    write_estimates_csv,
    write_loglog_csv,
    write_report_json,
)


def synthetic_estimates(C, q, dts, metric=Metric.ENDPOINT_LP, p=2.0):
    return [
        ErrorEstimate(dt=dt, metric=metric, p=p, value=C * dt**q,
                      n_paths=100, std_error=0.0)
        for dt in dts
    ]


class TestFit:
    def test_recovers_exact_power_law(self):
        dts = [2.0**-k for k in range(4, 12)]
        rep = fit_convergence(synthetic_estimates(C=3.7, q=1.5, dts=dts))
        assert abs(rep.slope - 1.5) <= 1e-12
        assert abs(rep.intercept - math.log(3.7)) <= 1e-12
        assert rep.residual < 1e-12
        assert rep.residual_rms < 1e-12

    def test_estimates_sorted_by_dt(self):
        dts = [2.0**-5, 2.0**-9, 2.0**-7]
        rep = fit_convergence(synthetic_estimates(1.0, 2.0, dts))
        assert [e.dt for e in rep.estimates] == sorted(dts)

    def test_requires_three_points(self):
        with pytest.raises(ValueError):
            fit_convergence(synthetic_estimates(1.0, 1.0, [0.1, 0.2]))

    def test_rejects_zero_values(self):
        ests = synthetic_estimates(1.0, 1.0, [0.1, 0.2, 0.4])
        zero = ErrorEstimate(dt=0.05, metric=Metric.ENDPOINT_LP, p=2.0,
                             value=0.0, n_paths=100, std_error=0.0)
        with pytest.raises(ValueError):
            fit_convergence(ests + [zero])

    def test_noisy_data_reports_residual(self):
        dts = [2.0**-k for k in range(4, 9)]
        vals = [dt**2 * (1.0 + 0.2 * (-1.0) ** i) for i, dt in enumerate(dts)]
        ests = [
            ErrorEstimate(dt=dt, metric=Metric.ENDPOINT_LP, p=2.0, value=v,
                          n_paths=10, std_error=0.0)
            for dt, v in zip(dts, vals)
        ]
        rep = fit_convergence(ests)
        assert rep.residual > 1e-3
        assert rep.residual_rms == pytest.approx(math.sqrt(rep.residual / len(dts)))


def test_estimate_validation():
    with pytest.raises(ValueError):
        ErrorEstimate(dt=-0.1, metric=Metric.ENDPOINT_LP, p=2.0, value=1.0,
                      n_paths=10, std_error=0.0)
    with pytest.raises(ValueError):
        ErrorEstimate(dt=0.1, metric=Metric.ENDPOINT_LP, p=2.0, value=-1.0,
                      n_paths=10, std_error=0.0)


def test_self_comparison_is_exactly_zero(cir_spec):
    for scheme in (SchemeId.BEM, SchemeId.LBE, SchemeId.MILSTEIN_CIR):
        est = estimate_strong_error(
            cir_spec, scheme, dt_coarse=2.0**-6, dt_fine=2.0**-6,
            metric=Metric.MAX_GRID_LP, p=2.0, n_paths=32, seed_stream=5,
        )
        assert est.value == 0.0
        assert est.std_error == 0.0


def test_estimate_determinism(cir_spec):
    kw = dict(dt_coarse=2.0**-5, dt_fine=2.0**-8, metric=Metric.ENDPOINT_LP,
              p=2.0, n_paths=64, seed_stream=9)
    a = estimate_strong_error(cir_spec, SchemeId.LBE, **kw)
    b = estimate_strong_error(cir_spec, SchemeId.LBE, **kw)
    assert (a.value, a.std_error) == (b.value, b.std_error)


def test_worker_count_does_not_change_results(cir_spec):
    # 300 paths split into blocks of 256: enough for a real thread pool.
    kw = dict(dts=[2.0**-5, 2.0**-4, 2.0**-3], dt_ref=2.0**-8,
              metric=Metric.MAX_GRID_LP, p=2.0, n_paths=300, seed_stream=3)
    serial = convergence_study(cir_spec, SchemeId.LBE, workers=None, **kw)
    threaded = convergence_study(cir_spec, SchemeId.LBE, workers=3, **kw)
    assert serial.slope == threaded.slope
    for a, b in zip(serial.estimates, threaded.estimates):
        assert (a.value, a.std_error) == (b.value, b.std_error)


def test_max_grid_dominates_endpoint(cir_spec):
    kw = dict(dt_coarse=2.0**-5, dt_fine=2.0**-8, p=2.0, n_paths=128, seed_stream=7)
    end = estimate_strong_error(cir_spec, SchemeId.LBE, metric=Metric.ENDPOINT_LP, **kw)
    grid = estimate_strong_error(cir_spec, SchemeId.LBE, metric=Metric.MAX_GRID_LP, **kw)
    assert grid.value >= end.value


def test_ladder_errors_shrink_with_dt(cir_spec):
    rep = convergence_study(
        cir_spec, SchemeId.LBE, dts=[2.0**-8, 2.0**-7, 2.0**-6], dt_ref=2.0**-11,
        metric=Metric.ENDPOINT_LP, p=2.0, n_paths=256, seed_stream=1,
    )
    vals = [e.value for e in rep.estimates]
    assert vals[0] < vals[1] < vals[2]
    assert rep.slope > 1.0
    assert isinstance(rep, ConvergenceReport)


def test_non_dyadic_ladders_rejected(cir_spec):
    with pytest.raises(ValueError):
        estimate_strong_error(cir_spec, SchemeId.LBE, dt_coarse=3.0**-3,
                              dt_fine=3.0**-4, metric=Metric.ENDPOINT_LP,
                              p=2.0, n_paths=8, seed_stream=0)
    with pytest.raises(ValueError):
        estimate_strong_error(cir_spec, SchemeId.LBE, dt_coarse=2.0**-4,
                              dt_fine=2.0**-5 * 0.99, metric=Metric.ENDPOINT_LP,
                              p=2.0, n_paths=8, seed_stream=0)


def test_scheme_restrictions(cir_spec, cev_spec):
    with pytest.raises(ValueError):
        estimate_strong_error(cev_spec, SchemeId.MILSTEIN_CIR, 2.0**-4, 2.0**-6,
                              Metric.ENDPOINT_LP, 2.0, 8, 0)
    with pytest.raises(ValueError):
        estimate_strong_error(cir_spec, SchemeId.EXPLICIT_EM, 2.0**-4, 2.0**-6,
                              Metric.ENDPOINT_LP, 2.0, 8, 0)
    with pytest.raises(ValueError):
        estimate_strong_error(cir_spec, SchemeId.LBE, 2.0**-4, 2.0**-6,
                              Metric.MILSTEIN_L1_GRID, 1.0, 8, 0)
    with pytest.raises(ValueError):
        estimate_strong_error(cir_spec, SchemeId.LBE, 2.0**-4, 2.0**-6,
                              Metric.ENDPOINT_LP, 0.5, 8, 0)


def test_inadmissible_ladder_step():
    spec = make_spec("AitSahalia", 1.0, alpha_m1=0.01, alpha_0=5.0, alpha_1=0.1,
                     alpha_2=1.0, sigma=0.5, r=2.0, rho=1.5)
    with pytest.raises(InadmissibleStepError):
        estimate_strong_error(spec, SchemeId.BEM, 2.0**-2, 2.0**-6,
                              Metric.ENDPOINT_LP, 2.0, 8, 0)


def test_p_above_threshold_flagged(cir_spec):
    # CIR reference set guarantees order one only for p < 4/3.
    kw = dict(dt_coarse=2.0**-4, dt_fine=2.0**-6, metric=Metric.ENDPOINT_LP,
              n_paths=16, seed_stream=0)
    flagged = estimate_strong_error(cir_spec, SchemeId.LBE, p=2.0, **kw)
    assert len(flagged.flags) == 1 and "outside guaranteed regime" in flagged.flags[0]
    clean = estimate_strong_error(cir_spec, SchemeId.LBE, p=1.25, **kw)
    assert clean.flags == ()


def test_bem_metric_in_transformed_coordinates(cir_spec):
    """BEM and LBE ladders measure different processes (x vs y = x^2)."""
    kw = dict(dt_coarse=2.0**-5, dt_fine=2.0**-8, metric=Metric.ENDPOINT_LP,
              p=2.0, n_paths=64, seed_stream=2)
    bem = estimate_strong_error(cir_spec, SchemeId.BEM, **kw)
    lbe = estimate_strong_error(cir_spec, SchemeId.LBE, **kw)
    assert bem.value != lbe.value
    assert bem.value > 0.0 and lbe.value > 0.0


class TestMilsteinComparison:
    PARAMS = CIRParams(kappa=2.0, theta=0.25, sigma=0.5)  # kappa*theta/sigma^2 = 2

    def run(self, **over):
        kw = dict(params=self.PARAMS, y0=0.25, T=1.0,
                  dts=[2.0**-6, 2.0**-5, 2.0**-4], n_paths=128, seed_stream=11)
        kw.update(over)
        return compare_milstein_lbe(**kw)

    def test_in_regime(self):
        comp = self.run()
        assert comp.regime_ok and comp.regime_ratio == pytest.approx(2.0)
        assert comp.warnings == ()
        assert comp.dt_ref == 2.0**-9
        l1 = [e.value for e in comp.l1_grid_gap]
        assert all(v > 0.0 for v in l1)
        assert l1[0] < l1[-1]
        assert 0.5 < comp.l1_slope < 1.5
        assert all(e.metric == Metric.MILSTEIN_L1_GRID for e in comp.l1_grid_gap)
        assert all(e.metric == Metric.MILSTEIN_SUP_L2 for e in comp.sup_l2_gap)

    def test_out_of_regime_warns_but_runs(self):
        params = CIRParams(kappa=2.0, theta=0.125, sigma=0.5)  # ratio 1 <= 3/2
        comp = self.run(params=params, y0=0.125)
        assert not comp.regime_ok
        assert len(comp.warnings) == 1 and "3/2" in comp.warnings[0]
        assert all(e.value > 0.0 for e in comp.l1_grid_gap)

    def test_feller_violation_rejected(self):
        with pytest.raises(InvalidParamsError):
            self.run(params=CIRParams(kappa=2.0, theta=0.125, sigma=1.5), y0=0.125)

    def test_determinism_across_workers(self):
        a = self.run(n_paths=300, workers=None)
        b = self.run(n_paths=300, workers=3)
        for x, y in zip(a.l1_grid_gap + a.sup_l2_gap, b.l1_grid_gap + b.sup_l2_gap):
            assert (x.value, x.std_error) == (y.value, y.std_error)


class TestMoments:
    GRID = GridSpec(T=1.0, dt=2.0**-6)

    def test_q_zero_is_one(self, cir_spec):
        (est,) = moment_monitor(cir_spec, SchemeId.LBE, self.GRID, [0.0],
                                n_paths=16, seed_stream=0)
        assert est.value == 1.0
        assert est.std_error == 0.0

    def test_finite_ranges(self, specs):
        cir = specs["CIR"]  # 2*kappa*theta/sigma^2 = 2
        assert moment_finite_range(cir, transformed=False) == (-2.0, math.inf)
        assert moment_finite_range(cir, transformed=True) == (-4.0, math.inf)
        assert moment_finite_range(specs["CEV"], False) == (-math.inf, math.inf)
        lo, hi = moment_finite_range(specs["Heston32"], False)
        assert (lo, hi) == (-math.inf, 4.0)
        lo_t, hi_t = moment_finite_range(specs["Heston32"], True)
        assert (lo_t, hi_t) == (-8.0, math.inf)
        assert moment_finite_range(specs["WrightFisher"], False) == (-2.0, math.inf)
        assert moment_finite_range(specs["WrightFisher"], True) == (-4.0, math.inf)
        assert moment_finite_range(specs["AitSahalia"], False) is None

    def test_in_range_flags(self, cir_spec):
        ests = moment_monitor(cir_spec, SchemeId.LBE, self.GRID, [-3.0, -1.0, 4.0],
                              n_paths=32, seed_stream=1)
        assert [e.in_range for e in ests] == [False, True, True]
        assert all(e.finite_range == (-2.0, math.inf) for e in ests)
        assert all(e.value > 0.0 for e in ests)

    def test_unknown_range_reported_as_none(self, as_spec):
        (est,) = moment_monitor(as_spec, SchemeId.BEM, self.GRID, [2.0],
                                n_paths=16, seed_stream=2)
        assert est.finite_range is None and est.in_range is None

    def test_negative_q_uses_pathwise_minimum(self, cir_spec):
        ests = moment_monitor(cir_spec, SchemeId.LBE, self.GRID, [-2.0],
                              n_paths=64, seed_stream=3)
        # E max_k Y_k^-2 >= (mean level)^-2 by Jensen; crude sanity floor
        assert ests[0].value > 1.0

    def test_stability_under_path_doubling(self, cir_spec):
        kw = dict(q_list=[4.0], seed_stream=4)
        (a,) = moment_monitor(cir_spec, SchemeId.LBE, self.GRID, n_paths=256, **kw)
        (b,) = moment_monitor(cir_spec, SchemeId.LBE, self.GRID, n_paths=512, **kw)
        assert 0.8 <= a.value / b.value <= 1.25

    def test_scheme_restrictions(self, cir_spec, cev_spec):
        with pytest.raises(ValueError):
            moment_monitor(cir_spec, SchemeId.EXPLICIT_EM, self.GRID, [2.0], 8, 0)
        with pytest.raises(ValueError):
            moment_monitor(cev_spec, SchemeId.MILSTEIN_CIR, self.GRID, [2.0], 8, 0)


class TestSerialization:
    def make_report(self):
        return fit_convergence(synthetic_estimates(2.0, 1.0, [0.125, 0.25, 0.5]))

    def test_estimates_csv(self):
        buf = io.StringIO()
        write_estimates_csv(buf, self.make_report().estimates)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "dt,metric,p,value,std-error"
        assert len(lines) == 4
        cells = lines[1].split(",")
        assert float(cells[0]) == 0.125
        assert cells[1] == "endpoint-Lp"
        assert float(cells[3]) == 2.0 * 0.125  # 17 digits: exact round trip

    def test_loglog_csv_consistent_with_fit(self):
        rep = self.make_report()
        buf = io.StringIO()
        write_loglog_csv(buf, rep)
        rows = buf.getvalue().splitlines()
        assert rows[0] == "dt,value,log-dt,log-value,fit-log-value"
        for row in rows[1:]:
            dt, value, ldt, lval, fit = map(float, row.split(","))
            assert ldt == pytest.approx(math.log(dt))
            assert fit == pytest.approx(rep.intercept + rep.slope * ldt)

    def test_report_json_round_trip(self):
        rep = self.make_report()
        buf = io.StringIO()
        write_report_json(buf, rep, extra={"model": "CIR"})
        doc = json.loads(buf.getvalue())
        assert doc["model"] == "CIR"
        assert doc["slope"] == pytest.approx(1.0)
        assert doc["intercept"] == pytest.approx(math.log(2.0))
        assert [e["dt"] for e in doc["estimates"]] == [0.125, 0.25, 0.5]
        assert doc["estimates"][0]["std-error"] == 0.0

    def test_estimate_dict_keys(self):
        d = estimate_to_dict(self.make_report().estimates[0])
        assert set(d) == {"dt", "metric", "p", "value", "n-paths", "std-error", "flags"}

    def test_comparison_dict(self):
        comp = compare_milstein_lbe(CIRParams(2.0, 0.25, 0.5), 0.25, 1.0,
                                    [2.0**-5, 2.0**-4], 32, seed_stream=6)
        d = comparison_to_dict(comp)
        assert d["regime-ok"] is True
        assert len(d["l1-grid-gap"]) == 2
        assert d["dt-ref"] == 2.0**-8


def test_report_to_dict_matches_fields():
    rep = fit_convergence(synthetic_estimates(1.0, 2.0, [0.1, 0.2, 0.4]))
    d = report_to_dict(rep)
    assert d["slope"] == rep.slope
    assert d["residual-rms"] == rep.residual_rms
    assert len(d["estimates"]) == 3
