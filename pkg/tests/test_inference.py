import numpy as np
import pytest

from ccmed import rng
from ccmed.adjust import CoefficientCovariances, coefficient_covariances
from ccmed.data import Dataset
from ccmed.errors import GateError, UnreliableResamplingError
from ccmed.estimators import ESTIMAND1, ESTIMAND1_TREATED, ESTIMAND2, ESTIMAND2_TREATED, ccm_point
from ccmed.inference import (BootstrapDistribution, GateResult, bootstrap_distribution,
                             bootstrap_statistics, conservatism_diagnostic, delta_ci,
                             denominator_gate, distribution_from_values, gate_from_distribution,
                             interaction_test, percentile_ci, ratio_gradient)
from ccmed.ols import fit_all
from ccmed.simulate import PRESETS, generate
from dataclasses import replace

from conftest import duplicate_arm


def dist(values):
    return distribution_from_values("x", values, len(values), 0, False)


def test_percentile_grid():
    lo, hi = percentile_ci(dist(np.arange(1, 101.0)), 0.05)
    assert lo == pytest.approx(3.475, abs=1e-12)
    assert hi == pytest.approx(97.525, abs=1e-12)


def test_percentile_constant_and_median():
    assert percentile_ci(dist(np.full(150, 2.5))) == (2.5, 2.5)
    vals = np.arange(101.0)
    assert percentile_ci(dist(vals), 1.0) == (50.0, 50.0)


def test_percentile_needs_values():
    with pytest.raises(ValueError):
        percentile_ci(dist(np.arange(50.0)))


def test_percentile_order_invariant():
    gen = np.random.default_rng(1)
    v = gen.normal(size=500)
    a = percentile_ci(dist(v))
    b = percentile_ci(dist(gen.permutation(v)))
    assert a == b
    assert v.min() <= a[0] <= a[1] <= v.max()


def test_unreliable_resampling():
    values = np.r_[np.full(80, np.nan), np.arange(920.0)]
    assert distribution_from_values("x", values, 1000, 0, False).b_valid == 920
    with pytest.raises(UnreliableResamplingError):
        distribution_from_values("x", np.r_[np.full(120, np.nan), np.arange(880.0)], 1000, 0, False)


def sim_data(n_per_arm=100, seed=0, preset="paper-fig1"):
    cfg = replace(PRESETS[preset], n_per_arm=n_per_arm)
    return generate(cfg, seed)


def test_bootstrap_deterministic_across_threads():
    d = sim_data()
    ref = bootstrap_distribution(d, "estimand1", 700, seed=9, threads=1)
    for threads in (2, 3, 8):
        other = bootstrap_distribution(d, "estimand1", 700, seed=9, threads=threads)
        assert np.array_equal(ref.values, other.values)
    strat = bootstrap_distribution(d, "estimand1", 700, seed=9, stratified=True, threads=4)
    assert np.array_equal(strat.values,
                          bootstrap_distribution(d, "estimand1", 700, 9, True, 1).values)
    assert not np.array_equal(strat.values, ref.values)
    assert ref.to_dict()["rng_scheme"] == rng.SCHEME


def test_bootstrap_constant_within_arm():
    arm = np.repeat([0, 1, 2], 30)
    d = Dataset.from_arrays(arm == 1, arm == 2, np.random.default_rng(0).normal(size=90),
                            arm * 1.5)
    bd = bootstrap_distribution(d, "tau1", 300, seed=1, stratified=False)
    assert np.all(bd.values == bd.values[0])


def test_bootstrap_requires_enough_reps_and_known_names(f2):
    with pytest.raises(ValueError):
        bootstrap_distribution(f2, "alpha1", 50, seed=1)
    with pytest.raises(KeyError):
        bootstrap_statistics(f2, ["nope"], 300, seed=1)


def test_bootstrap_statistic_matches_point_on_identity():
    d = sim_data(seed=4)
    from ccmed.ols import resample_coefficients
    from ccmed.inference import STATISTICS
    t = resample_coefficients(d, np.arange(d.n)[None, :])
    f = fit_all(d)
    assert STATISTICS["estimand2"](t)[0] == pytest.approx(ccm_point(f, ESTIMAND2).simple_value,
                                                          rel=1e-10)


def test_delta_refuses_without_gate(f2):
    f = fit_all(f2)
    c = coefficient_covariances(f2)
    with pytest.raises(GateError):
        delta_ci(f, c, ESTIMAND1, gate=None)
    with pytest.raises(GateError):
        delta_ci(f, c, ESTIMAND1, gate=GateResult(False, 0.05, (-1, 1), "failed"))


def test_delta_zero_variance_gives_point():
    d = sim_data(seed=2)
    f = fit_all(d)
    ok = GateResult(True, 0.05, (1, 2), "ok")
    lo, hi = delta_ci(f, CoefficientCovariances.zeros(), ESTIMAND1, gate=ok)
    v = ccm_point(f, ESTIMAND1).simple_value
    assert lo == hi == v


def test_gradient_matches_finite_differences():
    d = sim_data(seed=3)
    f = fit_all(d, include_interactions=True)
    g1 = ratio_gradient(fit_all(d), ESTIMAND1)
    a1, a2 = f.mediator.alpha1_hat, f.mediator.alpha2_hat
    assert g1[:2] == pytest.approx([-a2 / a1 ** 2, 1 / a1], rel=1e-12)
    assert np.all(g1[2:] == 0)

    def value(theta, eid):
        a1, a2, t1, t2, w1, w2 = theta
        scale = t1 / t2 if eid.which != ESTIMAND1.which else 1.0
        return a2 * w2 * scale / (a1 * w1)

    theta = np.array([a1, a2, f.total.tau1_hat, f.total.tau2_hat,
                      f.outcome.omega1_hat, f.outcome.omega2_hat])
    for eid in (ESTIMAND1_TREATED, ESTIMAND2_TREATED):
        g = ratio_gradient(f, eid)
        for k in range(6):
            h = 1e-6 * abs(theta[k])
            up, dn = theta.copy(), theta.copy()
            up[k] += h
            dn[k] -= h
            fd = (value(up, eid) - value(dn, eid)) / (2 * h)
            assert g[k] == pytest.approx(fd, rel=1e-6)


def test_delta_and_percentile_agree_at_large_n():
    d = sim_data(n_per_arm=3000, seed=5)
    f = fit_all(d)
    gate = denominator_gate(d, ESTIMAND1, b=1000, seed=2)
    assert gate.passed
    lo_d, hi_d = delta_ci(f, coefficient_covariances(d), ESTIMAND1, gate=gate)
    lo_p, hi_p = percentile_ci(bootstrap_distribution(d, "estimand1", 2000, seed=3))
    width = hi_p - lo_p
    assert abs(lo_d - lo_p) <= 0.1 * width
    assert abs(hi_d - hi_p) <= 0.1 * width


def test_gate_passes_on_strong_effect():
    gate = denominator_gate(sim_data(seed=1), ESTIMAND1, b=500, seed=1)
    assert gate.passed and gate.statistic == "acme1"


def test_gate_fails_when_mediator_ignores_t1():
    gen = np.random.default_rng(12)
    arm = np.repeat([0, 1, 2], 300)
    m = gen.normal(size=900) + 3 * (arm == 2)
    y = m + gen.normal(size=900)
    d = Dataset.from_arrays(arm == 1, arm == 2, m, y)
    gate = denominator_gate(d, ESTIMAND1, b=1000, seed=4)
    assert not gate.passed
    lo, hi = gate.denominator_ci
    assert lo < 0 < hi
    assert abs(lo + hi) < 0.5 * (hi - lo)
    assert "contains zero" in gate.message


def test_gate_statistics_per_estimand(f2):
    labels = {eid.label: denominator_gate(sim_data(seed=2), eid, b=300, seed=1).statistic
              for eid in (ESTIMAND1, ESTIMAND2)}
    assert labels == {"estimand1": "acme1", "estimand2": "pm1"}


def test_gate_monotone_in_alpha():
    gen = np.random.default_rng(0)
    for _ in range(30):
        vals = gen.normal(gen.uniform(-1, 3), 1, 400)
        bd = dist(vals)
        passed = [gate_from_distribution(bd, a).passed for a in np.linspace(0.001, 0.5, 40)]
        first = passed.index(True) if True in passed else len(passed)
        assert all(passed[first:])


def test_gate_reports_unreliable_resampling_as_failure(f1):
    gate = denominator_gate(f1, ESTIMAND1, b=300, seed=1)
    assert gate.passed is False


def test_interaction_test_exact_fit_gives_zero():
    gen = np.random.default_rng(1)
    arm = np.repeat([0, 1, 2], 20)
    m = gen.normal(size=60)
    d = Dataset.from_arrays(arm == 1, arm == 2, m, m)
    res = interaction_test(d, b=300, seed=1)
    assert res.statistic == 0 and res.p_value == 1 and not res.reject


def test_interaction_test_power():
    gen = np.random.default_rng(2)
    arm = np.repeat([0, 1, 2], 150)
    m = gen.normal(size=450)
    y = np.where(arm == 2, 2 * m, m) + gen.normal(0, 0.5, 450)
    d = Dataset.from_arrays(arm == 1, arm == 2, m, y)
    for method in ("bootstrap", "chi2"):
        res = interaction_test(d, b=500, seed=3, method=method)
        assert res.p_value < 0.01 and res.reject


def test_interaction_test_unavailable(f1):
    res = interaction_test(f1, b=300, seed=1)
    assert not res.available
    assert "arm2" in res.message


def test_interaction_test_deterministic():
    d = sim_data(seed=8)
    a = interaction_test(d, b=400, seed=5, threads=1)
    b = interaction_test(d, b=400, seed=5, threads=4)
    assert a == b


def test_diagnostic_f2(f2):
    res = conservatism_diagnostic(f2)
    assert res.lhs == pytest.approx(2, abs=1e-12)
    assert res.rhs == pytest.approx(1, abs=1e-12)
    assert res.holds and res.available
    assert "partial" in res.caveat


def test_diagnostic_duplicate_arm(random_corpus):
    res = conservatism_diagnostic(duplicate_arm(random_corpus[0]))
    assert res.lhs == res.rhs and not res.holds


def test_diagnostic_unavailable(f1):
    res = conservatism_diagnostic(f1)
    assert not res.available and "arm2" in res.reason


def test_diagnostic_scaling(random_corpus):
    for d in random_corpus[:20]:
        base = conservatism_diagnostic(d)
        for arrays in ({"y": 3.0 * d.y}, {"m": 3.0 * d.m}):
            res = conservatism_diagnostic(d.with_arrays(**arrays))
            assert res.lhs == pytest.approx(3 * base.lhs, rel=1e-9)
            assert res.rhs == pytest.approx(3 * base.rhs, rel=1e-9)
            assert res.holds == base.holds
