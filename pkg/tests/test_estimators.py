from dataclasses import replace

import numpy as np
import pytest

from ccmed.errors import DegenerateEstimandError, ModeError
from ccmed.estimators import (ANATOMY_LABELS, ESTIMAND1, ESTIMAND1_TREATED, ESTIMAND2,
                              ESTIMAND2_TREATED, TREATED, acme_naive, ate, ccm_point,
                              classify_anatomy, proportion_mediated)
from ccmed.data import Dataset
from ccmed.ols import fit_all

from conftest import duplicate_arm, swap_arms


def test_f1_ates(f1):
    f = fit_all(f1)
    assert ate(f, 1) == pytest.approx(1 / 3, abs=1e-14)
    assert ate(f, 2) == pytest.approx(1 / 3, abs=1e-14)
    with pytest.raises(ValueError):
        ate(f, 3)


def test_zero_outcome_ates():
    arm = np.repeat([0, 1, 2], 3)
    d = Dataset.from_arrays(arm == 1, arm == 2, np.arange(9.0), np.zeros(9))
    f = fit_all(d)
    assert ate(f, 1) == ate(f, 2) == pytest.approx(0, abs=1e-14)
    with pytest.raises(DegenerateEstimandError):
        proportion_mediated(f, 1)


def test_f1_proportion_mediated_reduces_to_beta(f1):
    f = fit_all(f1)
    assert proportion_mediated(f, 1) == pytest.approx(f.outcome.beta_hat, abs=1e-12)


def test_f2_treated_acme(f2):
    f = fit_all(f2, include_interactions=True)
    assert acme_naive(f, 2, TREATED) == pytest.approx(f.mediator.alpha2_hat * 2, abs=1e-12)
    with pytest.raises(ModeError):
        acme_naive(fit_all(f2), 1, TREATED)


def test_f1_estimands(f1):
    f = fit_all(f1)
    e1 = ccm_point(f, ESTIMAND1)
    e2 = ccm_point(f, ESTIMAND2)
    assert e1.simple_value == pytest.approx(2, abs=1e-12)
    assert e2.simple_value == pytest.approx(2, abs=1e-12)
    assert e1.simple_value * e1.denominator == pytest.approx(e1.numerator, abs=1e-12)
    assert e2.to_dict()["estimand"] == "estimand2"


def test_zero_alpha1_is_degenerate(f2):
    f = fit_all(f2)
    f = replace(f, mediator=replace(f.mediator, alpha1_hat=0.0))
    with pytest.raises(DegenerateEstimandError):
        ccm_point(f, ESTIMAND1)
    assert acme_naive(f, 1) == 0


def test_treated_needs_interacted_fit(f2):
    with pytest.raises(ModeError):
        ccm_point(fit_all(f2), ESTIMAND1_TREATED)


def test_ratio_consistency(random_corpus):
    for d in random_corpus[:40]:
        f = fit_all(d, True)
        for eid in (ESTIMAND1, ESTIMAND2, ESTIMAND1_TREATED, ESTIMAND2_TREATED):
            e = ccm_point(f, eid)
            assert abs(e.simple_value * e.denominator - e.numerator) <= 1e-12 * max(1, abs(e.numerator))


def test_arm_swap_and_duplicate(random_corpus):
    for d in random_corpus[:40]:
        f = fit_all(d)
        g = fit_all(swap_arms(d))
        for eid in (ESTIMAND1, ESTIMAND2):
            v = ccm_point(f, eid).simple_value
            assert ccm_point(g, eid).simple_value == pytest.approx(1 / v, rel=1e-10)
        h = fit_all(duplicate_arm(d))
        assert ccm_point(h, ESTIMAND1).simple_value == 1.0
        assert ccm_point(h, ESTIMAND2).simple_value == 1.0


def test_beta_cancellation_affine(random_corpus):
    for d in random_corpus[:40]:
        v = ccm_point(fit_all(d), ESTIMAND1).simple_value
        w = ccm_point(fit_all(d.with_arrays(y=2.5 * d.y - 7)), ESTIMAND1).simple_value
        assert v == w


def test_application_components():
    assert 0.177 / 0.113 == pytest.approx(1.566, abs=5e-4)


@pytest.mark.parametrize("args,label", [
    (("greater", True, True), "disproportionate_scaling_up"),
    (("greater", False, False), "unrelatedness_of_mediator"),
    (("greater", True, False), "proportionate_scaling_up"),
    (("equal", True, True), "distinct_causal_anatomies"),
    (("equal", False, False), "indistinguishable_causal_anatomies"),
    (("equal", True, False), "not_applicable"),
    (("greater", False, True), "not_applicable"),
    (("less", True, True), "not_applicable"),
])
def test_anatomy_table(args, label):
    assert classify_anatomy(*args) == label
    assert label in ANATOMY_LABELS
