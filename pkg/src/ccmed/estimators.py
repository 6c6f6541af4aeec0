"""Point estimators: ATEs, naive ACMEs, proportions mediated and the two CCM ratios.

The naive ACMEs (``alpha_j * beta`` or ``alpha_j * omega_j``) inherit the
bias of the outcome-model slope whenever the mediator-outcome relation is
confounded. The CCM ratios cancel that common bias (without interactions)
or attenuate toward one (with interactions); see :mod:`ccmed.inference`
for the conservatism diagnostic.
"""

from dataclasses import dataclass, field
from typing import Optional

from .errors import DegenerateEstimandError, ModeError

CONFOUNDING_NOTE = ("confounding-sensitive: the mediator-outcome slope is not "
                    "identified without assuming no unobserved confounding")

RATIO_OF_ACMES = "ratio_of_acmes"
RATIO_OF_PROPORTIONS = "ratio_of_proportions"
NONE = "none"
TREATED = "treated"

ANATOMY_LABELS = (
    "disproportionate_scaling_up",
    "unrelatedness_of_mediator",
    "proportionate_scaling_up",
    "distinct_causal_anatomies",
    "indistinguishable_causal_anatomies",
    "not_applicable",
)


@dataclass(frozen=True)
class EstimandId:
    which: str = RATIO_OF_ACMES
    interaction_mode: str = NONE

    def __post_init__(self):
        if self.which not in (RATIO_OF_ACMES, RATIO_OF_PROPORTIONS):
            raise ValueError(f"unknown estimand {self.which!r}")
        if self.interaction_mode not in (NONE, TREATED):
            raise ValueError(f"unknown interaction mode {self.interaction_mode!r}")

    @property
    def label(self):
        base = "estimand1" if self.which == RATIO_OF_ACMES else "estimand2"
        return base + ("_treated" if self.interaction_mode == TREATED else "")


ESTIMAND1 = EstimandId(RATIO_OF_ACMES, NONE)
ESTIMAND2 = EstimandId(RATIO_OF_PROPORTIONS, NONE)
ESTIMAND1_TREATED = EstimandId(RATIO_OF_ACMES, TREATED)
ESTIMAND2_TREATED = EstimandId(RATIO_OF_PROPORTIONS, TREATED)


@dataclass
class CcmEstimate:
    id: EstimandId
    simple_value: float
    numerator: float
    denominator: float
    adjusted_value: Optional[float] = None
    gate: Optional[object] = None
    ci: Optional[tuple] = None
    ci_method: Optional[str] = None
    ci_alpha: Optional[float] = None
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "estimand": self.id.label,
            "which": self.id.which,
            "interaction_mode": self.id.interaction_mode,
            "simple_value": self.simple_value,
            "adjusted_value": self.adjusted_value,
            "correction": (None if self.adjusted_value is None
                           else self.adjusted_value - self.simple_value),
            "numerator": self.numerator,
            "denominator": self.denominator,
            "ci": None if self.ci is None else list(self.ci),
            "ci_method": self.ci_method,
            "ci_alpha": self.ci_alpha,
            "gate": None if self.gate is None else self.gate.to_dict(),
            "notes": list(self.notes),
        }


def _check_arm(j):
    if j not in (1, 2):
        raise ValueError(f"arm index must be 1 or 2, got {j!r}")


def ate(f, j):
    _check_arm(j)
    return f.total.tau1_hat if j == 1 else f.total.tau2_hat


def _alpha(f, j):
    return f.mediator.alpha1_hat if j == 1 else f.mediator.alpha2_hat


def _slope(f, j, mode):
    if mode == TREATED:
        if not f.outcome.interactions_included:
            raise ModeError("ACME for the treated needs an outcome fit with interactions")
        return f.outcome.omega1_hat if j == 1 else f.outcome.omega2_hat
    if mode != NONE:
        raise ValueError(f"unknown interaction mode {mode!r}")
    return f.outcome.beta_hat


def acme_naive(f, j, mode=NONE):
    """Product-of-coefficients ACME for arm ``j``.

    ``mode="none"`` gives ``alpha_j * beta`` (with an interacted fit this
    is the control-condition ACME); ``mode="treated"`` gives
    ``alpha_j * omega_j``. Either is biased under mediator-outcome
    confounding; reports carry :data:`CONFOUNDING_NOTE`.
    """
    _check_arm(j)
    return _alpha(f, j) * _slope(f, j, mode)


def proportion_mediated(f, j, mode=NONE):
    tau = ate(f, j)
    if tau == 0:
        raise DegenerateEstimandError(f"ATE of arm {j} is zero; proportion mediated is undefined")
    return acme_naive(f, j, mode) / tau


def _nonzero(value, what):
    if value == 0:
        raise DegenerateEstimandError(
            f"{what} is zero, so the ratio is undefined; run the denominator gate "
            "before estimating")


def ccm_point(f, id=ESTIMAND1):
    """Simple CCM estimate from a fitted bundle.

    The value is computed from the simplified ratio (``alpha2/alpha1`` for
    the no-interaction ACME ratio, so a near-zero ``beta`` cannot cause
    0/0); numerator and denominator are kept unsimplified.
    """
    a1 = f.mediator.alpha1_hat
    a2 = f.mediator.alpha2_hat
    t1 = f.total.tau1_hat
    t2 = f.total.tau2_hat
    if id.interaction_mode == TREATED:
        w1 = _slope(f, 1, TREATED)
        w2 = _slope(f, 2, TREATED)
    else:
        w1 = w2 = f.outcome.beta_hat
    _nonzero(a1, "alpha1_hat")
    if id.interaction_mode == TREATED:
        _nonzero(w1, "omega1_hat")

    if id.which == RATIO_OF_ACMES:
        num, den = a2 * w2, a1 * w1
        if id.interaction_mode == TREATED:
            value = (a2 * w2) / (a1 * w1)
        else:
            value = a2 / a1
    else:
        _nonzero(t1, "tau1_hat")
        _nonzero(t2, "tau2_hat")
        num, den = a2 * w2 / t2, a1 * w1 / t1
        if id.interaction_mode == TREATED:
            value = (a2 * w2 * t1) / (a1 * w1 * t2)
        else:
            value = (a2 * t1) / (a1 * t2)
    return CcmEstimate(id, float(value), float(num), float(den))


_TABLE = {
    ("greater", True, True): "disproportionate_scaling_up",
    ("greater", False, False): "unrelatedness_of_mediator",
    ("greater", True, False): "proportionate_scaling_up",
    ("equal", True, True): "distinct_causal_anatomies",
    ("equal", False, False): "indistinguishable_causal_anatomies",
}


def classify_anatomy(ate_cmp, e1_reject, e2_reject):
    """Map the three hypothesis-test outcomes to a causal-anatomy label.

    ``ate_cmp`` is ``"greater"`` when the second treatment's ATE is
    significantly larger than the first's and ``"equal"`` when the two
    cannot be distinguished; ``e1_reject``/``e2_reject`` say whether each
    CCM estimand was found greater than one. Combinations without an
    interpretation give ``"not_applicable"``.
    """
    return _TABLE.get((ate_cmp, bool(e1_reject), bool(e2_reject)), "not_applicable")
