"""Saturated least-squares fits for the mediator, outcome and total-effect models.

Three regressions are fitted on the same data::

    m ~ 1 + t1 + t2                               (mediator model)
    y ~ 1 + t1 + t2 + m [+ t1:m + t2:m]           (outcome model)
    y ~ 1 + t1 + t2                               (total-effect model)

Point fits go through a Householder QR solve. Resampling goes through
:func:`resample_coefficients`, which evaluates the same saturated fits for
a whole batch of resamples at once from centred within-arm moments.
Because every design here is saturated in the arm indicators the two
routes are algebraically identical; the test suite checks they agree.
"""

from dataclasses import dataclass

import numpy as np

from .data import ARMS, arm_partition
from .errors import SingularityError

_RANK_TOL = 1e-10


def _qr(design, names=None):
    design = np.asarray(design, dtype=float)
    if design.ndim != 2:
        raise ValueError("design must be a 2-d array")
    n, p = design.shape
    names = list(names) if names is not None else [f"x{j}" for j in range(p)]
    if n < p:
        raise SingularityError(f"{n} rows cannot identify {p} coefficients", names)
    norms = np.linalg.norm(design, axis=0)
    zero = [names[j] for j in range(p) if norms[j] == 0]
    if zero:
        raise SingularityError(f"design column(s) {zero} are identically zero", zero)
    q, r = np.linalg.qr(design / norms, mode="reduced")
    diag = np.abs(np.diag(r))
    bad = [names[j] for j in range(p) if diag[j] < _RANK_TOL]
    if bad:
        raise SingularityError(f"design is rank deficient; column(s) {bad} are collinear "
                               "with earlier columns", bad)
    return q, r, norms


def solve_least_squares(design, response, names=None):
    """Least-squares coefficients via QR decomposition.

    Columns are scaled to unit norm before factorising so that the rank
    check is insensitive to units.

    Parameters
    ----------
    design : (n, p) array_like
    response : (n,) array_like
    names : sequence of str, optional
        Column labels used in the singularity message.

    Returns
    -------
    coef : (p,) ndarray

    Raises
    ------
    SingularityError
        If the design does not have full column rank.
    """
    coef, _, _ = _lstsq(design, response, names)
    return coef


def _lstsq(design, response, names=None):
    """Coefficients, residuals and ``(X'X)^{-1}`` from one factorisation."""
    q, r, norms = _qr(design, names)
    response = np.asarray(response, dtype=float)
    scaled = np.linalg.solve(r, q.T @ response)
    coef = scaled / norms
    resid = response - np.asarray(design, dtype=float) @ coef
    r_inv = np.linalg.solve(r, np.eye(r.shape[0]))
    xtx_inv = (r_inv @ r_inv.T) / np.outer(norms, norms)
    return coef, resid, xtx_inv


@dataclass(frozen=True)
class MediatorFit:
    pi_hat: float
    alpha1_hat: float
    alpha2_hat: float
    resid_var_eta: float


@dataclass(frozen=True)
class OutcomeFit:
    lambda_hat: float
    delta1_hat: float
    delta2_hat: float
    beta_hat: float
    gamma1_hat: float
    gamma2_hat: float
    omega1_hat: float
    omega2_hat: float
    interactions_included: bool
    resid_var_iota: float


@dataclass(frozen=True)
class TotalFit:
    chi_hat: float
    tau1_hat: float
    tau2_hat: float
    resid_var_rho: float


@dataclass(frozen=True)
class FitBundle:
    mediator: MediatorFit
    outcome: OutcomeFit
    total: TotalFit
    arms: tuple
    n: int

    def summary(self):
        md, oc, tt = self.mediator, self.outcome, self.total
        return {
            "n": self.n,
            "arm_sizes": {a.arm: a.n_arm for a in self.arms},
            "mediator": {"pi": md.pi_hat, "alpha1": md.alpha1_hat, "alpha2": md.alpha2_hat,
                         "resid_var_eta": md.resid_var_eta},
            "outcome": {"lambda": oc.lambda_hat, "delta1": oc.delta1_hat, "delta2": oc.delta2_hat,
                        "beta": oc.beta_hat, "gamma1": oc.gamma1_hat, "gamma2": oc.gamma2_hat,
                        "omega1": oc.omega1_hat, "omega2": oc.omega2_hat,
                        "interactions_included": oc.interactions_included,
                        "resid_var_iota": oc.resid_var_iota},
            "total": {"chi": tt.chi_hat, "tau1": tt.tau1_hat, "tau2": tt.tau2_hat,
                      "resid_var_rho": tt.resid_var_rho},
        }


def _arm_design(d):
    return np.column_stack([np.ones(d.n), d.t1, d.t2])


def _require_arms(d):
    sizes = np.bincount(d.arm, minlength=3)
    for code, k in enumerate(sizes):
        if k == 0:
            raise SingularityError(f"arm {ARMS[code]} has no rows", [ARMS[code]], arm=ARMS[code])


def _group_means(arm, v):
    """Arm means and residuals; the closed form of OLS on a saturated arm design."""
    means = np.array([v[arm == code].mean() for code in range(3)])
    return means, v - means[arm]


def _indicator_fit(d, v):
    _require_arms(d)
    means, resid = _group_means(d.arm, v)
    dof = d.n - 3
    s2 = float(resid @ resid / dof) if dof > 0 else float("nan")
    # differences of identical arm means are exactly zero, which keeps
    # ratios of duplicated arms at exactly one
    return float(means[0]), float(means[1] - means[0]), float(means[2] - means[0]), s2


def fit_mediator_model(d):
    """Regress ``m`` on the arm indicators."""
    return MediatorFit(*_indicator_fit(d, d.m))


def fit_total_model(d):
    """Regress ``y`` on the arm indicators."""
    return TotalFit(*_indicator_fit(d, d.y))


def _check_within_arm_variation(d, arms=(0, 1, 2)):
    arm = d.arm
    for code in arms:
        m = d.m[arm == code]
        if m.size < 2 or np.all(m == m[0]):
            raise SingularityError(
                f"mediator is constant within arm {ARMS[code]}; the within-arm slope "
                "(and the interacted outcome model) is not identified",
                [("m", "t1:m", "t2:m")[code]], arm=ARMS[code])


def outcome_design(d, include_interactions):
    cols = [np.ones(d.n), d.t1, d.t2, d.m]
    names = ["const", "t1", "t2", "m"]
    if include_interactions:
        cols += [d.t1 * d.m, d.t2 * d.m]
        names += ["t1:m", "t2:m"]
    return np.column_stack(cols), names


def fit_outcome_model(d, include_interactions=False):
    """Regress ``y`` on the arm indicators and ``m`` (optionally interacted).

    With interactions the mediator must vary within every arm; otherwise a
    :class:`SingularityError` naming the offending arm is raised rather
    than silently dropping a term.
    """
    _require_arms(d)
    if include_interactions:
        _check_within_arm_variation(d)
        return _interacted_fit(d)
    design, names = outcome_design(d, False)
    coef, resid, _ = _lstsq(design, d.y, names)
    dof = d.n - len(names)
    s2 = float(resid @ resid / dof) if dof > 0 else float("nan")
    lam, d1, d2, beta = (float(c) for c in coef)
    return OutcomeFit(lam, d1, d2, beta, 0.0, 0.0, beta, beta, False, s2)


def _interacted_fit(d):
    # fully interacted in the arm, so the fit splits into one bivariate
    # regression per arm
    arm = d.arm
    icpt, slope = np.empty(3), np.empty(3)
    resid = np.empty(d.n)
    for code in range(3):
        mask = arm == code
        m, y = d.m[mask], d.y[mask]
        slope[code] = _bivariate_slope(m, y)
        icpt[code] = y.mean() - slope[code] * m.mean()
        resid[mask] = y - icpt[code] - slope[code] * m
    dof = d.n - 6
    s2 = float(resid @ resid / dof) if dof > 0 else float("nan")
    beta = float(slope[0])
    return OutcomeFit(float(icpt[0]), float(icpt[1] - icpt[0]), float(icpt[2] - icpt[0]),
                      beta, float(slope[1] - slope[0]), float(slope[2] - slope[0]),
                      float(slope[1]), float(slope[2]), True, s2)


def fit_all(d, include_interactions=False):
    """Fit all three models on one dataset snapshot."""
    return FitBundle(fit_mediator_model(d), fit_outcome_model(d, include_interactions),
                     fit_total_model(d), arm_partition(d), d.n)


def _bivariate_slope(m, y):
    dm = m - m.mean()
    return float(dm @ (y - y.mean()) / (dm @ dm))


def arm_slopes(d):
    """Within-arm slopes of ``y`` on ``m`` and mediator variances, arms 1 and 2.

    Returns
    -------
    (omega1_hat, omega2_hat, var_m_arm1, var_m_arm2)
    """
    _check_within_arm_variation(d, arms=(1, 2))
    arm = d.arm
    out = []
    for code in (1, 2):
        mask = arm == code
        out.append(_bivariate_slope(d.m[mask], d.y[mask]))
    summaries = arm_partition(d)
    return out[0], out[1], summaries[1].var_m, summaries[2].var_m


def homoskedastic_covariances(d, include_interactions=False):
    """Classical OLS covariance of ``(alpha1, alpha2, tau1, tau2, omega1, omega2)``.

    Mediator and total-effect coefficients share one design, so their
    joint covariance is ``S kron (X'X)^{-1}`` with ``S`` the residual
    covariance of ``(eta, rho)``. The omega block comes from the outcome
    regression (with ``omega_j = beta`` when interactions are off). The
    omega/alpha and omega/tau cross terms vanish when the outcome error
    is homoskedastic and uncorrelated with the centred mediator, which is
    the assumption behind this scheme.
    """
    _require_arms(d)
    x = _arm_design(d)
    _, e_eta, xtx_inv = _lstsq(x, d.m, ["const", "t1", "t2"])
    _, e_rho, _ = _lstsq(x, d.y, ["const", "t1", "t2"])
    dof = d.n - 3
    s_mm = e_eta @ e_eta / dof
    s_yy = e_rho @ e_rho / dof
    s_my = e_eta @ e_rho / dof
    block = xtx_inv[1:, 1:]
    cov = np.zeros((6, 6))
    cov[0:2, 0:2] = s_mm * block
    cov[2:4, 2:4] = s_yy * block
    cov[0:2, 2:4] = s_my * block
    cov[2:4, 0:2] = s_my * block.T

    if include_interactions:
        _check_within_arm_variation(d)
    design, names = outcome_design(d, include_interactions)
    try:
        _, e_iota, o_inv = _lstsq(design, d.y, names)
    except SingularityError:
        # mediator constant within every arm: the slope block is undefined
        cov[4:6, 4:6] = np.nan
        return cov
    s2 = e_iota @ e_iota / (d.n - len(names))
    o_cov = s2 * o_inv
    if include_interactions:
        # omega_j = beta + gamma_j: linear map of (beta, gamma1, gamma2)
        a = np.array([[1.0, 1.0, 0.0], [1.0, 0.0, 1.0]])
        cov[4:6, 4:6] = a @ o_cov[3:6, 3:6] @ a.T
    else:
        cov[4:6, 4:6] = o_cov[3, 3]
    return cov


def robust_gamma_covariance(d):
    """HC1 sandwich covariance of ``(gamma1, gamma2)`` from the interacted fit."""
    _require_arms(d)
    _check_within_arm_variation(d)
    design, names = outcome_design(d, True)
    coef, resid, xtx_inv = _lstsq(design, d.y, names)
    meat = (design * resid[:, None] ** 2).T @ design
    k = design.shape[1]
    cov = xtx_inv @ meat @ xtx_inv * d.n / (d.n - k)
    return coef[4:6], cov[4:6, 4:6]


# ---------------------------------------------------------------------------
# batched resample fits

def _moments(arm, m, y, index):
    """Centred within-arm moments for every row of ``index`` (shape (B, n))."""
    b, n = index.shape
    a = arm[index]
    g = (np.arange(b)[:, None] * 3 + a).ravel()
    mm = m[index].ravel()
    yy = y[index].ravel()
    size = 3 * b
    cnt = np.bincount(g, minlength=size).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_m = np.bincount(g, mm, size) / cnt
        mean_y = np.bincount(g, yy, size) / cnt
    dm = mm - mean_m[g]
    dy = yy - mean_y[g]
    smm = np.bincount(g, dm * dm, size)
    smy = np.bincount(g, dm * dy, size)
    syy = np.bincount(g, dy * dy, size)
    shape = (b, 3)
    return {
        "g": g, "dm": dm, "dy": dy,
        "cnt": cnt.reshape(shape), "mean_m": mean_m.reshape(shape),
        "mean_y": mean_y.reshape(shape), "smm": smm.reshape(shape),
        "smy": smy.reshape(shape), "syy": syy.reshape(shape),
    }


def resample_coefficients(d, index, robust=False):
    """Saturated-fit coefficients for many resamples at once.

    Parameters
    ----------
    d : Dataset
    index : (B, n) int array
        Row indices of each resample.
    robust : bool
        Also compute HC0 variances of the within-arm slopes (needed by the
        interaction test).

    Returns
    -------
    dict of (B,) arrays. Entries that are undefined for a resample are
    NaN; ``ok_means``, ``ok_beta`` and ``ok_slopes`` are boolean masks.
    """
    index = np.atleast_2d(np.asarray(index))
    mo = _moments(d.arm, d.m, d.y, index)
    cnt, mean_m, mean_y = mo["cnt"], mo["mean_m"], mo["mean_y"]
    smm, smy, syy = mo["smm"], mo["smy"], mo["syy"]
    n = index.shape[1]

    ok_means = np.all(cnt >= 1, axis=1)
    scale = 1.0 + np.abs(np.nan_to_num(mean_m))
    flat = smm <= cnt * (1e-12 * scale) ** 2
    ok_beta = ok_means & ~np.all(flat, axis=1)
    ok_slopes = ok_means & np.all(cnt >= 2, axis=1) & ~np.any(flat, axis=1)

    out = {"ok_means": ok_means, "ok_beta": ok_beta, "ok_slopes": ok_slopes,
           "n0": cnt[:, 0], "n1": cnt[:, 1], "n2": cnt[:, 2]}
    with np.errstate(invalid="ignore", divide="ignore"):
        out["pi"] = mean_m[:, 0]
        out["alpha1"] = mean_m[:, 1] - mean_m[:, 0]
        out["alpha2"] = mean_m[:, 2] - mean_m[:, 0]
        out["chi"] = mean_y[:, 0]
        out["tau1"] = mean_y[:, 1] - mean_y[:, 0]
        out["tau2"] = mean_y[:, 2] - mean_y[:, 0]

        dof3 = n - 3
        out["s2_eta"] = smm.sum(1) / dof3
        out["s2_rho"] = syy.sum(1) / dof3
        out["s_eta_rho"] = smy.sum(1) / dof3

        beta = np.where(ok_beta, smy.sum(1) / smm.sum(1), np.nan)
        out["beta"] = beta
        lam = mean_y[:, 0] - beta * mean_m[:, 0]
        out["lambda"] = lam
        out["delta1"] = mean_y[:, 1] - beta * mean_m[:, 1] - lam
        out["delta2"] = mean_y[:, 2] - beta * mean_m[:, 2] - lam
        rss = syy.sum(1) - smy.sum(1) ** 2 / smm.sum(1)
        out["s2_iota"] = np.where(ok_beta, rss / (n - 4), np.nan)
        out["var_beta"] = out["s2_iota"] / smm.sum(1)

        slopes = np.where(ok_slopes[:, None], smy / smm, np.nan)
        out["slope0"] = slopes[:, 0]
        out["omega1"] = slopes[:, 1]
        out["omega2"] = slopes[:, 2]
        out["gamma1"] = slopes[:, 1] - slopes[:, 0]
        out["gamma2"] = slopes[:, 2] - slopes[:, 0]
        rss_i = (syy - smy ** 2 / smm).sum(1)
        out["s2_iota_int"] = np.where(ok_slopes, rss_i / (n - 6), np.nan)
        out["var_slopes"] = out["s2_iota_int"][:, None] / smm

        out["var_m"] = smm / (cnt - 1)

        if robust:
            b = index.shape[0]
            e = mo["dy"] - slopes.ravel()[mo["g"]] * mo["dm"]
            meat = np.bincount(mo["g"], (mo["dm"] * e) ** 2, 3 * b).reshape(b, 3)
            out["hc0_slopes"] = meat / smm ** 2
    return out


def coefficients_of(d, robust=False):
    """:func:`resample_coefficients` on the data as observed (scalars)."""
    res = resample_coefficients(d, np.arange(d.n)[None, :], robust=robust)
    return {k: v[0] for k, v in res.items()}
