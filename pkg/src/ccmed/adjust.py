"""Second-order Taylor finite-sample adjustments for the CCM ratio estimators.

Each adjusted estimator subtracts the estimated leading bias term
``0.5 * sum_{k,l} Cov(theta_k, theta_l) * d2f/dtheta_k dtheta_l`` from the
simple ratio, with every quantity replaced by its sample estimate. The
covariances come from :func:`coefficient_covariances`, either from the
classical OLS formulas or from a bootstrap over the same resampling
protocol as :mod:`ccmed.inference`.

The formula helpers (``_e1``, ``_e2``, ``_e1_treated``, ``_e2_treated``)
accept scalars or numpy arrays so the simulation code can evaluate them
per bootstrap replicate.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import rng
from .errors import DegenerateEstimandError, ModeError
from .estimators import RATIO_OF_ACMES, TREATED
from .ols import homoskedastic_covariances
from .resample import resample_table

log = logging.getLogger(__name__)

LABELS = ("alpha1", "alpha2", "tau1", "tau2", "omega1", "omega2")
_POS = {name: i for i, name in enumerate(LABELS)}
MIN_BOOTSTRAP = 200
MAX_DROP = 0.01


@dataclass(frozen=True)
class CoefficientCovariances:
    entries: np.ndarray
    scheme: str
    b_reps: Optional[int] = None
    b_dropped: int = 0
    interactions: bool = False

    def __call__(self, a, b=None):
        b = a if b is None else b
        return float(self.entries[_POS[a], _POS[b]])

    def to_dict(self):
        return {"labels": list(LABELS), "entries": self.entries.tolist(),
                "scheme": self.scheme, "b_reps": self.b_reps, "b_dropped": self.b_dropped}

    @classmethod
    def zeros(cls):
        return cls(np.zeros((6, 6)), "analytic_homoskedastic")


def coefficient_covariances(d, scheme="analytic_homoskedastic", b_reps=None, seed=None,
                            interactions=False, stratified=False, threads=None):
    """Joint covariance of ``(alpha1, alpha2, tau1, tau2, omega1, omega2)``.

    Parameters
    ----------
    scheme : {"analytic_homoskedastic", "bootstrap"}
    b_reps : int
        Bootstrap replicates (at least 200); bootstrap scheme only.
    interactions : bool
        Whether ``omega_j`` is the within-arm slope (interacted outcome
        model) or the common slope ``beta``.

    Bootstrap resamples whose fits are singular are dropped; a warning is
    logged when more than 1% are dropped.
    """
    if scheme == "analytic_homoskedastic":
        return CoefficientCovariances(homoskedastic_covariances(d, interactions), scheme,
                                      interactions=interactions)
    if scheme != "bootstrap":
        raise ValueError(f"unknown covariance scheme {scheme!r}")
    if b_reps is None or b_reps < MIN_BOOTSTRAP:
        raise ValueError(f"bootstrap covariances need b_reps >= {MIN_BOOTSTRAP}")
    if seed is None:
        seed = rng.fresh_seed()
    key = rng.stream_key(seed, rng.COVARIANCE)
    table = resample_table(d, b_reps, key, stratified=stratified, threads=threads)
    return covariances_from_table(table, interactions, b_reps)


def covariances_from_table(table, interactions, b_reps=None):
    """Empirical covariance of coefficient draws, one joint resample stream."""
    if interactions:
        w1, w2, ok = table["omega1"], table["omega2"], table["ok_slopes"]
    else:
        w1, w2, ok = table["beta"], table["beta"], table["ok_beta"]
    draws = np.column_stack([table["alpha1"], table["alpha2"], table["tau1"],
                             table["tau2"], w1, w2])
    ok = ok & np.all(np.isfinite(draws), axis=1)
    b = len(ok) if b_reps is None else b_reps
    dropped = int(b - ok.sum())
    if dropped > MAX_DROP * b:
        log.warning("%d of %d bootstrap resamples dropped as singular", dropped, b)
    entries = np.cov(draws[ok], rowvar=False, ddof=1)
    return CoefficientCovariances(entries, "bootstrap", b, dropped, interactions)


# ---------------------------------------------------------------------------
# formulas (scalars or arrays)

def _e1(a1, a2, v_a1, c_a1a2):
    return a2 / a1 + c_a1a2 / a1 ** 2 - v_a1 * a2 / a1 ** 3


def _e1_balanced(a1, a2, s2_eta, n):
    return a2 / a1 + 3 * s2_eta / (a1 ** 2 * n) - 6 * s2_eta * a2 / (a1 ** 3 * n)


def _e2(a1, a2, t1, t2, c):
    """``c`` maps label pairs such as ``("alpha1", "tau2")`` to covariances."""
    return (a2 * t1 / (a1 * t2)
            - c["alpha1", "alpha1"] * a2 * t1 / (a1 ** 3 * t2)
            - c["tau2", "tau2"] * a2 * t1 / (a1 * t2 ** 3)
            + c["alpha2", "alpha1"] * t1 / (a1 ** 2 * t2)
            + c["alpha2", "tau2"] * t1 / (a1 * t2 ** 2)
            - c["alpha2", "tau1"] / (a1 * t2)
            - c["alpha1", "tau2"] * a2 * t1 / (a1 ** 2 * t2 ** 2)
            + c["alpha1", "tau1"] * a2 / (a1 ** 2 * t2)
            + c["tau2", "tau1"] * a2 / (a1 * t2 ** 2))


def _e1_treated(a1, a2, w1, w2, c):
    return (a2 * w2 / (a1 * w1)
            - c["alpha1", "alpha1"] * a2 * w2 / (a1 ** 3 * w1)
            - c["omega1", "omega1"] * a2 * w2 / (a1 * w1 ** 3)
            + c["alpha2", "alpha1"] * w2 / (a1 ** 2 * w1)
            + c["alpha2", "omega1"] * w2 / (a1 * w1 ** 2)
            - c["alpha2", "omega2"] / (a1 * w1)
            - c["alpha1", "omega1"] * a2 * w2 / (a1 ** 2 * w1 ** 2)
            + c["alpha1", "omega2"] * a2 / (a1 ** 2 * w1)
            + c["omega1", "omega2"] * a2 / (a1 * w1 ** 2))


def _e2_treated(a1, a2, w1, w2, t1, t2, c):
    s = a2 * w2 * t1 / (a1 * w1 * t2)
    return (s
            - c["alpha1", "alpha1"] * a2 * w2 * t1 / (a1 ** 3 * w1 * t2)
            - c["omega1", "omega1"] * a2 * w2 * t1 / (a1 * w1 ** 3 * t2)
            - c["tau2", "tau2"] * a2 * w2 * t1 / (a1 * w1 * t2 ** 3)
            + c["alpha2", "alpha1"] * w2 * t1 / (a1 ** 2 * w1 * t2)
            - c["alpha2", "omega2"] * t1 / (a1 * w1 * t2)
            + c["alpha2", "omega1"] * w2 * t1 / (a1 * w1 ** 2 * t2)
            + c["alpha2", "tau2"] * w2 * t1 / (a1 * w1 * t2 ** 2)
            - c["alpha2", "tau1"] * w2 / (a1 * w1 * t2)
            + c["alpha1", "omega2"] * a2 * t1 / (a1 ** 2 * w1 * t2)
            - c["alpha1", "omega1"] * a2 * w2 * t1 / (a1 ** 2 * w1 ** 2 * t2)
            - c["alpha1", "tau2"] * a2 * w2 * t1 / (a1 ** 2 * w1 * t2 ** 2)
            + c["alpha1", "tau1"] * a2 * w2 / (a1 ** 2 * w1 * t2)
            + c["omega2", "omega1"] * a2 * t1 / (a1 * w1 ** 2 * t2)
            + c["omega2", "tau2"] * a2 * t1 / (a1 * w1 * t2 ** 2)
            - c["omega2", "tau1"] * a2 / (a1 * w1 * t2)
            - c["omega1", "tau2"] * a2 * w2 * t1 / (a1 * w1 ** 2 * t2 ** 2)
            + c["omega1", "tau1"] * a2 * w2 / (a1 * w1 ** 2 * t2)
            + c["tau2", "tau1"] * a2 * w2 / (a1 * w1 * t2 ** 2))


class _Pairs:
    """Label-pair view of a covariance matrix."""

    def __init__(self, cov):
        self.cov = cov

    def __getitem__(self, pair):
        return self.cov(*pair)


def analytic_pairs(table):
    """Per-replicate classical covariances from saturated-fit moments.

    Works on the dict returned by ``resample_coefficients`` and gives the
    pairs used by ``_e1`` and ``_e2`` (arrays of length B).
    """
    n0, n1, n2 = table["n0"], table["n1"], table["n2"]
    s_mm, s_yy, s_my = table["s2_eta"], table["s2_rho"], table["s_eta_rho"]
    c = {}
    # empty arms give inf/NaN here; those replicates are masked by the callers
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = {(1, 1): 1 / n0 + 1 / n1, (2, 2): 1 / n0 + 1 / n2, (1, 2): 1 / n0, (2, 1): 1 / n0}
        for i in (1, 2):
            for j in (1, 2):
                c[f"alpha{i}", f"alpha{j}"] = s_mm * inv[i, j]
                c[f"tau{i}", f"tau{j}"] = s_yy * inv[i, j]
                c[f"alpha{i}", f"tau{j}"] = s_my * inv[i, j]
                c[f"tau{j}", f"alpha{i}"] = s_my * inv[i, j]
    return c


# ---------------------------------------------------------------------------
# public estimators

def _need(value, what):
    if value == 0:
        raise DegenerateEstimandError(f"{what} is zero; the adjusted ratio is undefined")


def adjust_estimand1_no_interaction(f, c):
    """Adjusted ``alpha2/alpha1`` using the supplied coefficient covariances."""
    a1, a2 = f.mediator.alpha1_hat, f.mediator.alpha2_hat
    _need(a1, "alpha1_hat")
    return float(_e1(a1, a2, c("alpha1"), c("alpha1", "alpha2")))


def adjust_estimand1_balanced(f, n=None):
    """Balanced-design shortcut using only the mediator residual variance."""
    sizes = {a.n_arm for a in f.arms}
    if len(sizes) != 1:
        raise ModeError("arm sizes differ; use adjust_estimand1_no_interaction instead")
    a1, a2 = f.mediator.alpha1_hat, f.mediator.alpha2_hat
    _need(a1, "alpha1_hat")
    n = f.n if n is None else n
    return float(_e1_balanced(a1, a2, f.mediator.resid_var_eta, n))


def adjust_estimand2_no_interaction(f, c):
    a1, a2 = f.mediator.alpha1_hat, f.mediator.alpha2_hat
    t1, t2 = f.total.tau1_hat, f.total.tau2_hat
    _need(a1, "alpha1_hat")
    _need(t2, "tau2_hat")
    return float(_e2(a1, a2, t1, t2, _Pairs(c)))


def adjust_with_interaction(f, c, id):
    """Adjusted ACMET ratio (``id.which`` selects the estimand).

    Uses ``omega_j = beta + gamma_j`` from the fit, so a fit whose gammas
    are zero reproduces the no-interaction adjustments.
    """
    a1, a2 = f.mediator.alpha1_hat, f.mediator.alpha2_hat
    w1, w2 = f.outcome.omega1_hat, f.outcome.omega2_hat
    _need(a1, "alpha1_hat")
    _need(w1, "omega1_hat")
    pairs = _Pairs(c)
    if id.which == RATIO_OF_ACMES:
        return float(_e1_treated(a1, a2, w1, w2, pairs))
    t1, t2 = f.total.tau1_hat, f.total.tau2_hat
    _need(t2, "tau2_hat")
    return float(_e2_treated(a1, a2, w1, w2, t1, t2, pairs))


def adjust(f, c, id):
    """Dispatch to the adjusted estimator matching ``id``."""
    if id.interaction_mode == TREATED:
        if not f.outcome.interactions_included:
            raise ModeError("treated-mode adjustment needs an interacted fit")
        return adjust_with_interaction(f, c, id)
    if id.which == RATIO_OF_ACMES:
        return adjust_estimand1_no_interaction(f, c)
    return adjust_estimand2_no_interaction(f, c)
