import json
from dataclasses import replace

import numpy as np
import pytest

from ccmed.errors import CcmError, InputError
from ccmed.estimators import ESTIMAND1, ccm_point
from ccmed.ols import fit_all, fit_mediator_model
from ccmed.simulate import (PRESETS, Normal, SimulationConfig, _naive_acmes_with_confounder,
                            config_from_dict, generate, generate_no_interaction,
                            generate_with_interaction, load_config, monte_carlo,
                            true_estimands)

DEGENERATE = SimulationConfig(
    n_per_arm=5, pi=Normal(0), lam=Normal(0), alpha1=Normal(4), alpha2=Normal(10),
    beta=Normal(3), delta1=Normal(5), delta2=Normal(5), psi=Normal(0), phi=Normal(0),
    x_low=0.0, x_high=0.0)


def test_degenerate_draws_are_exact():
    d = generate_no_interaction(DEGENERATE, 1)
    med = fit_mediator_model(d)
    assert med.alpha1_hat == pytest.approx(4, abs=1e-13)
    assert med.alpha2_hat == pytest.approx(10, abs=1e-13)
    assert list(np.bincount(d.arm)) == [5, 5, 5]
    assert np.array_equal(d.m, 4.0 * d.t1 + 10.0 * d.t2)


def test_confounder_not_emitted_but_retrievable():
    cfg = PRESETS["paper-fig1"]
    d, x = generate_no_interaction(cfg, 3, keep_confounder=True)
    assert x.shape == (300,) and np.all((x >= 0) & (x <= 5))
    assert d.column_names == {"t1": "t1", "t2": "t2", "m": "m", "y": "y"}
    assert np.array_equal(generate_no_interaction(cfg, 3).m, d.m)


def test_zero_gammas_reproduce_no_interaction():
    base = PRESETS["paper-fig1"]
    inter = replace(base, gamma1=Normal(0), gamma2=Normal(0))
    a = generate_no_interaction(base, 17)
    b = generate_with_interaction(inter, 17)
    assert np.array_equal(a.m, b.m) and np.array_equal(a.y, b.y)
    with pytest.raises(InputError):
        generate_with_interaction(base, 1)
    with pytest.raises(InputError):
        generate_no_interaction(inter, 1)


def test_config_invariants():
    with pytest.raises(InputError):
        SimulationConfig(n_per_arm=1)
    with pytest.raises(InputError):
        SimulationConfig(alpha1=Normal(4, -1))
    with pytest.raises(InputError):
        SimulationConfig(gamma1=Normal(1, 1))


def test_true_values_default():
    t = true_estimands(PRESETS["paper-fig1"])
    assert t["estimand1"] == 2.5 and t["method"] == "analytic"
    assert t["acme1"] == 12 and t["acme2"] == 30


def test_true_values_symmetric():
    cfg = replace(PRESETS["paper-fig1"], alpha2=Normal(4, 2))
    t = true_estimands(cfg)
    assert t["estimand1"] == 1 and t["estimand2"] == 1
    ti = true_estimands(replace(cfg, gamma1=Normal(1, 2), gamma2=Normal(1, 2)), "analytic")
    assert ti["estimand1_treated"] == 1 and ti["estimand2_treated"] == 1


def test_brute_force_reproducible_and_matches_analytic():
    cfg = PRESETS["paper-figD1"]
    analytic = true_estimands(cfg, "analytic")
    runs = [true_estimands(cfg, seed=s, n=2_000_000) for s in (0, 1)]
    assert runs[0]["method"] == "brute_force"
    for key in ("estimand1", "estimand2", "estimand1_treated", "estimand2_treated"):
        assert runs[0][key] == pytest.approx(runs[1][key], rel=1e-3)
        assert runs[0][key] == pytest.approx(analytic[key], rel=1e-3)


def test_analytic_implied_naive_bias():
    # plim of the pooled within-arm slope minus E[beta]: cov(M, phi X) / var(M | arm),
    # pooled over arms; unit-level alphas add variance in the treated arms only
    cfg = PRESETS["paper-fig1"]
    var_x = 25 / 12
    ex2 = var_x + 2.5 ** 2
    var_psi_x = (cfg.psi.var + cfg.psi.mean ** 2) * ex2 - (cfg.psi.mean * 2.5) ** 2
    var_m = [cfg.pi.var + var_psi_x + extra for extra in (0, cfg.alpha1.var, cfg.alpha2.var)]
    bias = 3 * cfg.psi.mean * cfg.phi.mean * var_x / sum(var_m)
    assert 4 * bias == pytest.approx(2.55, abs=0.01)
    assert 10 * bias == pytest.approx(6.37, abs=0.01)


def test_large_n_estimand_converges():
    cfg = replace(PRESETS["paper-fig1"], n_per_arm=20000)
    d = generate(cfg, 5)
    assert ccm_point(fit_all(d), ESTIMAND1).simple_value == pytest.approx(2.5, abs=0.05)


def test_confounder_refit_removes_bias():
    cfg = replace(PRESETS["paper-fig1"], n_per_arm=5000)
    d, x = generate(cfg, 2, keep_confounder=True)
    f = fit_all(d)
    a1, a2 = _naive_acmes_with_confounder(d, x)
    assert f.mediator.alpha1_hat * f.outcome.beta_hat - 12 > 1.5
    assert a1 == pytest.approx(12, abs=0.7)
    assert a2 == pytest.approx(30, abs=1.0)


def test_monte_carlo_is_deterministic_across_threads():
    cfg = replace(PRESETS["paper-fig1"], n_per_arm=30)
    a = monte_carlo(cfg, 6, 200, seed=3, threads=1)
    b = monte_carlo(cfg, 6, 200, seed=3, threads=4)
    assert a == b
    assert a.r_reps == 6 and a.failures == 0
    for rec in a.estimands.values():
        assert 0 <= rec["coverage_95"] <= 1
    assert a.table_csv() == b.table_csv()
    json.dumps(a.to_dict(include_table=True))


def test_monte_carlo_degenerate_config():
    # M is an exact function of arm, so beta (and the naive ACMEs) are not
    # identified, but the CCM ratios do not need beta and are recovered exactly
    s = monte_carlo(DEGENERATE, 3, 200, seed=1)
    assert s.r_reps == 3 and s.failures == 0
    for name in ("estimand1", "estimand2", "estimand1_adjusted", "estimand2_adjusted"):
        assert s.estimands[name]["mean_bias"] == pytest.approx(0, abs=1e-9)
        assert s.estimands[name]["coverage_95"] == 1.0
        assert s.estimands[name]["mean_ci_width"] == pytest.approx(0, abs=1e-9)
    assert "acme1" not in s.estimands
    assert s.naive["mean_bias_acme1"] is None


def test_monte_carlo_interacted_fields():
    cfg = replace(PRESETS["paper-figD1"], n_per_arm=60)
    s = monte_carlo(cfg, 3, 200, seed=2, truth=true_estimands(cfg, "analytic"))
    assert {"acmet1", "estimand1_treated", "estimand2_treated_adjusted"} <= set(s.estimands)
    assert s.diagnostic_holds_rate is not None


def test_monte_carlo_aborts_on_failures():
    bad = replace(PRESETS["paper-fig1"], n_per_arm=2)
    with pytest.raises(CcmError):
        monte_carlo(bad, 4, 200, seed=1)
    with pytest.raises(ValueError):
        monte_carlo(DEGENERATE, 1, 200, seed=1)


def test_config_from_json(tmp_path):
    raw = {"preset": "paper-figD1", "n_per_arm": 50, "seed": 7,
           "params": {"lambda": {"mean": 1, "var": 0.5}},
           "x_dist": {"low": 1, "high": 2}}
    cfg = config_from_dict(raw)
    assert cfg.n_per_arm == 50 and cfg.lam == Normal(1, 0.5) and cfg.interactions
    assert cfg.seed == 7
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert load_config(p) == replace(cfg, label=cfg.label)


@pytest.mark.parametrize("raw,path", [
    ({"params": {"alpha1": {"mean": 1, "var": -2}}}, "config.params.alpha1.var"),
    ({"params": {"alpha3": {"mean": 1}}}, "config.params.alpha3"),
    ({"params": {"beta": {"mean": "x"}}}, "config.params.beta.mean"),
    ({"n_per_arm": 1}, "config.n_per_arm"),
    ({"n_per_arm": 2.5}, "config.n_per_arm"),
    ({"x_dist": {"low": 0}}, "config.x_dist"),
    ({"interactions": {"gamma1": {"mean": 1}}}, "config.interactions"),
    ({"preset": "nope"}, "config.preset"),
    ({"colour": 1}, "config.colour"),
])
def test_config_errors_name_field(raw, path):
    with pytest.raises(InputError) as info:
        config_from_dict(raw)
    assert str(info.value).startswith(path)
