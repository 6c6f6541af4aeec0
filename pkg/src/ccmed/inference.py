"""Bootstrap and delta-method inference, the denominator gate and diagnostics."""

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import rng
from .adjust import _e1, _e2, analytic_pairs
from .errors import GateError, SingularityError, UnreliableResamplingError
from .estimators import RATIO_OF_ACMES, TREATED, ccm_point
from .ols import arm_slopes, resample_coefficients, robust_gamma_covariance
from .resample import resample_table

MIN_BOOTSTRAP = 200
MIN_VALID = 0.9


def _ratio(num, den):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / den
    return np.where(den == 0, np.nan, out)


def _stat_functions():
    def coef(name, mask="ok_means"):
        return lambda t: np.where(t[mask], t[name], np.nan)

    def acme(j, slope):
        mask = "ok_slopes" if slope.startswith("omega") else "ok_beta"
        return lambda t: np.where(t[mask], t[f"alpha{j}"] * t[slope], np.nan)

    def pm(j, slope):
        return lambda t: _ratio(acme(j, slope)(t), coef(f"tau{j}")(t))

    def e1(t):
        return _ratio(coef("alpha2")(t), coef("alpha1")(t))

    def e2(t):
        return _ratio(coef("alpha2")(t) * t["tau1"], coef("alpha1")(t) * t["tau2"])

    def e1t(t):
        return _ratio(acme(2, "omega2")(t), acme(1, "omega1")(t))

    def e2t(t):
        return _ratio(acme(2, "omega2")(t) * t["tau1"], acme(1, "omega1")(t) * t["tau2"])

    def e1_adj(t):
        c = analytic_pairs(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = _e1(t["alpha1"], t["alpha2"], c["alpha1", "alpha1"], c["alpha1", "alpha2"])
        return np.where(t["ok_means"] & (t["alpha1"] != 0), v, np.nan)

    def e2_adj(t):
        c = analytic_pairs(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = _e2(t["alpha1"], t["alpha2"], t["tau1"], t["tau2"], c)
        return np.where(t["ok_means"] & (t["alpha1"] != 0) & (t["tau2"] != 0), v, np.nan)

    table = {
        "alpha1": coef("alpha1"), "alpha2": coef("alpha2"),
        "tau1": coef("tau1"), "tau2": coef("tau2"),
        "ate_diff": lambda t: np.where(t["ok_means"], t["tau2"] - t["tau1"], np.nan),
        "beta": coef("beta", "ok_beta"),
        "omega1": coef("omega1", "ok_slopes"), "omega2": coef("omega2", "ok_slopes"),
        "gamma1": coef("gamma1", "ok_slopes"), "gamma2": coef("gamma2", "ok_slopes"),
        "acme1": acme(1, "beta"), "acme2": acme(2, "beta"),
        "acmet1": acme(1, "omega1"), "acmet2": acme(2, "omega2"),
        "pm1": pm(1, "beta"), "pm2": pm(2, "beta"),
        "pmt1": pm(1, "omega1"), "pmt2": pm(2, "omega2"),
        "estimand1": e1, "estimand2": e2,
        "estimand1_treated": e1t, "estimand2_treated": e2t,
        "estimand1_adjusted": e1_adj, "estimand2_adjusted": e2_adj,
    }
    return table


STATISTICS = _stat_functions()

# statistic bootstrapped by the gate for each estimand label
GATE_DENOMINATORS = {
    "estimand1": "acme1",
    "estimand2": "pm1",
    "estimand1_treated": "acmet1",
    "estimand2_treated": "pmt1",
}


@dataclass(frozen=True)
class BootstrapDistribution:
    stat_label: str
    values: np.ndarray
    b_requested: int
    b_valid: int
    seed: int
    stratified: bool
    rng_scheme: str = rng.SCHEME

    def to_dict(self):
        return {"stat_label": self.stat_label, "b_requested": self.b_requested,
                "b_valid": self.b_valid, "seed": self.seed, "stratified": self.stratified,
                "rng_scheme": self.rng_scheme}


@dataclass(frozen=True)
class GateResult:
    passed: bool
    alpha: float
    denominator_ci: tuple
    message: str
    statistic: str = ""

    def to_dict(self):
        return {"passed": self.passed, "alpha": self.alpha,
                "denominator_statistic": self.statistic,
                "denominator_ci": None if self.denominator_ci is None else list(self.denominator_ci),
                "message": self.message}


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    reject: bool
    method: str
    alpha: float = 0.05
    available: bool = True
    message: str = ""

    __test__ = False

    def to_dict(self):
        return {"available": self.available, "statistic": self.statistic,
                "p_value": self.p_value, "reject": self.reject, "method": self.method,
                "alpha": self.alpha, "message": self.message}


@dataclass(frozen=True)
class DiagnosticResult:
    lhs: float
    rhs: float
    holds: bool
    caveat: str
    available: bool = True
    reason: str = ""
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {"available": self.available, "lhs": self.lhs, "rhs": self.rhs,
                "holds": self.holds, "caveat": self.caveat, "reason": self.reason,
                **self.details}


def distribution_from_values(label, values, b_requested, seed, stratified, check=True):
    """Wrap raw replicate values, dropping undefined ones."""
    values = np.asarray(values, dtype=float)
    good = np.sort(values[np.isfinite(values)])
    if check and good.size < MIN_VALID * b_requested:
        raise UnreliableResamplingError(int(good.size), b_requested, MIN_VALID)
    good.setflags(write=False)
    return BootstrapDistribution(label, good, int(b_requested), int(good.size), seed, stratified)


def bootstrap_statistics(d, names, b, seed, stratified=False, threads=None, key=None,
                         check=True):
    """Bootstrap several named statistics from one shared set of resamples.

    Returns ``(distributions, table)`` where ``table`` holds the raw
    per-replicate coefficients.
    """
    if b < MIN_BOOTSTRAP:
        raise ValueError(f"need at least {MIN_BOOTSTRAP} bootstrap replicates, got {b}")
    unknown = [nm for nm in names if nm not in STATISTICS]
    if unknown:
        raise KeyError(f"unknown statistic(s) {unknown}; choose from {sorted(STATISTICS)}")
    if key is None:
        key = rng.stream_key(seed, rng.BOOTSTRAP)
    table = resample_table(d, b, key, stratified=stratified, threads=threads)
    dists = {nm: distribution_from_values(nm, STATISTICS[nm](table), b, seed, stratified, check)
             for nm in names}
    return dists, table


def bootstrap_distribution(d, statistic, b, seed, stratified=False, threads=None):
    """Nonparametric bootstrap distribution of one named statistic.

    Rows are drawn with replacement from the whole sample (or within each
    arm when ``stratified``), all fits are recomputed and the statistic is
    evaluated. Undefined replicates are dropped; if fewer than 90% remain
    :class:`UnreliableResamplingError` is raised.
    """
    dists, _ = bootstrap_statistics(d, [statistic], b, seed, stratified, threads)
    return dists[statistic]


def percentile_ci(bd, alpha=0.05):
    """Equal-tailed percentile interval with linear interpolation.

    The quantile at level ``q`` sits at rank ``1 + (b_valid - 1) q`` of the
    sorted replicates.
    """
    values = bd.values if isinstance(bd, BootstrapDistribution) else np.sort(np.asarray(bd))
    if values.size < 100:
        raise ValueError(f"percentile interval needs at least 100 valid replicates, got {values.size}")
    lo, hi = np.quantile(values, [alpha / 2, 1 - alpha / 2])
    return float(lo), float(hi)


def ratio_gradient(f, id):
    """Gradient of the simple CCM estimate w.r.t. ``(alpha1, alpha2, tau1, tau2, omega1, omega2)``.

    Without interactions the common slope cancels, so the omega entries
    are zero.
    """
    a1, a2 = f.mediator.alpha1_hat, f.mediator.alpha2_hat
    t1, t2 = f.total.tau1_hat, f.total.tau2_hat
    treated = id.interaction_mode == TREATED
    w1, w2 = (f.outcome.omega1_hat, f.outcome.omega2_hat) if treated else (1.0, 1.0)
    scale = t1 / t2 if id.which != RATIO_OF_ACMES else 1.0
    v = a2 * w2 * scale / (a1 * w1)
    g = np.zeros(6)
    g[0] = -v / a1
    g[1] = w2 * scale / (a1 * w1)
    if id.which != RATIO_OF_ACMES:
        g[2] = a2 * w2 / (a1 * w1 * t2)
        g[3] = -v / t2
    if treated:
        g[4] = -v / w1
        g[5] = a2 * scale / (a1 * w1)
    return g


def delta_ci(f, c, id, alpha=0.05, *, gate):
    """Symmetric normal interval from a first-order delta-method standard error.

    Refuses (``GateError``) unless ``gate`` shows the denominator is
    bounded away from zero; otherwise the ratio's variance is not a
    meaningful summary.
    """
    if gate is None or not gate.passed:
        raise GateError("the denominator gate did not pass, so a delta-method interval for the "
                        "ratio is not meaningful; its denominator is not bounded away from zero")
    v = ccm_point(f, id).simple_value
    g = ratio_gradient(f, id)
    var = float(g @ c.entries @ g)
    se = np.sqrt(max(var, 0.0))
    z = stats.norm.ppf(1 - alpha / 2)
    return float(v - z * se), float(v + z * se)


def gate_from_distribution(bd, alpha=0.05):
    """Gate on an existing bootstrap distribution of the denominator."""
    try:
        lo, hi = percentile_ci(bd, alpha)
    except ValueError as exc:
        return GateResult(False, alpha, None, str(exc), bd.stat_label)
    passed = lo > 0 or hi < 0
    if passed:
        msg = f"{1 - alpha:.0%} interval of {bd.stat_label} excludes zero"
    else:
        msg = (f"{1 - alpha:.0%} interval of {bd.stat_label} [{lo:.4g}, {hi:.4g}] contains zero; "
               "the ratio is not meaningful and its interval may be unbounded")
    return GateResult(passed, alpha, (lo, hi), msg, bd.stat_label)


def denominator_gate(d, id, alpha=0.05, b=2000, seed=None, stratified=False, threads=None):
    """Check that the estimand's denominator is significantly non-zero.

    Never raises for a failed gate: unreliable resampling or singular fits
    produce ``passed=False`` with an explanation.
    """
    seed = rng.fresh_seed() if seed is None else seed
    stat = GATE_DENOMINATORS[id.label]
    try:
        bd = bootstrap_distribution(d, stat, b, seed, stratified, threads)
    except UnreliableResamplingError as exc:
        return GateResult(False, alpha, None, str(exc), stat)
    return gate_from_distribution(bd, alpha)


def _wald(g, v):
    """``g' V^+ g`` for stacks of 2-vectors and 2x2 matrices."""
    pinv = np.linalg.pinv(v)
    return np.einsum("...i,...ij,...j->...", g, pinv, g)


def _hc1_gamma_cov(table, n):
    h = table["hc0_slopes"] * n / (n - 6)
    v = np.empty(h.shape[:1] + (2, 2))
    v[:, 0, 0] = h[:, 1] + h[:, 0]
    v[:, 1, 1] = h[:, 2] + h[:, 0]
    v[:, 0, 1] = v[:, 1, 0] = h[:, 0]
    return v


def interaction_test(d, alpha=0.05, b=999, seed=None, method="bootstrap", stratified=False,
                     threads=None):
    """Joint Wald test of no treatment-mediator interaction (``gamma1 = gamma2 = 0``).

    The statistic uses the HC1 sandwich covariance of the interaction
    coefficients. ``method="bootstrap"`` (default) compares it with the
    bootstrap distribution of the recentred statistic
    ``(g* - g)' V*^{-1} (g* - g)``; ``method="chi2"`` uses the asymptotic
    chi-square(2) reference.
    """
    try:
        robust_gamma_covariance(d)
    except SingularityError as exc:
        return TestResult(float("nan"), float("nan"), False, method, alpha, False,
                          f"test unavailable: {exc}")
    # closed-form point fit: exact zeros when the interacted model fits perfectly
    point = resample_coefficients(d, np.arange(d.n)[None, :], robust=True)
    g = np.array([point["gamma1"][0], point["gamma2"][0]])
    w = float(_wald(g, _hc1_gamma_cov(point, d.n)[0]))
    if method == "chi2":
        p = float(stats.chi2.sf(w, 2))
    elif method == "bootstrap":
        if b < MIN_BOOTSTRAP:
            raise ValueError(f"need at least {MIN_BOOTSTRAP} bootstrap replicates")
        seed = rng.fresh_seed() if seed is None else seed
        key = rng.stream_key(seed, rng.BOOTSTRAP, 7)
        table = resample_table(d, b, key, stratified=stratified, robust=True, threads=threads)
        ok = table["ok_slopes"]
        gs = np.column_stack([table["gamma1"], table["gamma2"]])[ok] - g
        ws = _wald(gs, _hc1_gamma_cov(table, d.n)[ok])
        ws = ws[np.isfinite(ws)]
        if ws.size < MIN_VALID * b:
            return TestResult(w, float("nan"), False, method, alpha, False,
                              str(UnreliableResamplingError(ws.size, b, MIN_VALID)))
        p = float((1 + np.sum(ws >= w * (1 - 1e-12))) / (ws.size + 1))
    else:
        raise ValueError(f"unknown reference distribution {method!r}")
    return TestResult(w, p, p < alpha, method, alpha)


CAVEAT = ("partial, large-sample check: compares omega_2 * Var(M | arm 2) with "
          "omega_1 * Var(M | arm 1); the mediator-outcome error covariances that also "
          "enter the conservatism condition cannot be estimated from the data")


def conservatism_diagnostic(d):
    """Compare ``omega2_hat * var_m(arm2)`` with ``omega1_hat * var_m(arm1)``.

    ``holds`` is the strict inequality ``lhs > rhs``; it supports (but cannot
    establish) attenuation of the ACMET ratios toward one.
    """
    try:
        w1, w2, v1, v2 = arm_slopes(d)
    except SingularityError as exc:
        return DiagnosticResult(float("nan"), float("nan"), False, CAVEAT, False, str(exc))
    lhs = w2 * v2
    rhs = w1 * v1
    return DiagnosticResult(lhs, rhs, bool(lhs > rhs), CAVEAT,
                            details={"omega1": w1, "omega2": w2, "var_m_arm1": v1,
                                     "var_m_arm2": v2})
