"""Direct and EBLUP small area estimators with their analytic MSE estimators.

Estimates are returned as lists of :class:`AreaEstimate`, one per area. The
direct estimators (HT, PS) cover the sampled areas; the model-based ones cover
every area of the population, using the synthetic regression prediction
(flagged) where an area has no sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import AreaMeans, SampleFrame
from .errors import NumericalError, SchemaError
from .mixed import fit_fh_reml, fit_lmm_reml

TAGS = ("HT", "PS", "AEBLUP", "UEBLUP", "ZI")


@dataclass(frozen=True)
class AreaEstimate:
    area: str
    estimate: float
    mse: Optional[float]
    estimator_tag: str
    n_used: int
    flags: tuple = ()

    def __post_init__(self):
        if self.estimator_tag not in TAGS:
            raise ValueError(f"unknown estimator tag {self.estimator_tag!r}")
        if self.mse is not None and not self.mse >= 0:
            raise ValueError(f"negative or undefined MSE {self.mse} for area {self.area}")

    @property
    def rmse(self) -> Optional[float]:
        return None if self.mse is None else math.sqrt(self.mse)


def _pop_index(means: AreaMeans):
    return {a: j for j, a in enumerate(means.area_ids)}


# ---------------------------------------------------------------------------
# Direct estimators
# ---------------------------------------------------------------------------


def horvitz_thompson(sample: SampleFrame) -> list:
    """Sample mean per area; MSE without finite population correction."""
    J = sample.J
    n = sample.counts
    s = np.bincount(sample.codes, weights=sample.y, minlength=J)
    mean = s / n
    resid = sample.y - mean[sample.codes]
    ss = np.bincount(sample.codes, weights=resid * resid, minlength=J)
    out = []
    for j, area in enumerate(sample.area_ids):
        if n[j] >= 2:
            out.append(AreaEstimate(area, float(mean[j]), float(ss[j] / (n[j] * (n[j] - 1))),
                                    "HT", int(n[j])))
        else:
            out.append(AreaEstimate(area, float(mean[j]), None, "HT", int(n[j]),
                                    ("mse_undefined_n1",)))
    return out


def post_stratified(sample: SampleFrame, strata_counts: AreaMeans) -> list:
    """Post-stratified estimator: population-share weighted stratum means.

    When a stratum present in the population has no sample units, the weights
    of the sampled strata are renormalized to one and the area is flagged.
    Single-unit strata contribute a stratum MSE of 0 (flagged).
    """
    if not sample.has_strata or strata_counts.strata_counts is None:
        raise SchemaError("post-stratified estimator needs strata on sample and population")
    levels = strata_counts.stratum_levels
    lvl = {s: h for h, s in enumerate(levels)}
    try:
        smap = np.array([lvl[s] for s in sample.stratum_levels], dtype=np.int64)
    except KeyError as exc:
        raise SchemaError(f"sample stratum {exc.args[0]!r} not in population strata") from None
    pidx = _pop_index(strata_counts)
    H = len(levels)
    out = []
    for j, area in enumerate(sample.area_ids):
        if area not in pidx:
            raise SchemaError(f"sample area {area!r} absent from population")
        Nh = strata_counts.strata_counts[pidx[area]].astype(np.float64)
        sel = sample.codes == j
        ys = sample.y[sel]
        hs = smap[sample.stratum_codes[sel]]
        n_j = ys.size
        nh = np.bincount(hs, minlength=H)
        flags = []
        ybar = np.zeros(H)
        mse_h = np.zeros(H)
        for h in range(H):
            if nh[h] == 0:
                continue
            yh = ys[hs == h]
            ybar[h] = yh.mean()
            if nh[h] >= 2:
                mse_h[h] = float(np.sum((yh - ybar[h]) ** 2)) / (nh[h] * (nh[h] - 1))
            else:
                flags.append(f"ps_single_unit_stratum:{levels[h]}")
        sampled = nh > 0
        if np.any((Nh > 0) & ~sampled):
            flags.append("ps_empty_stratum")
        if np.any(sampled & (Nh == 0)):
            flags.append("ps_stratum_absent_in_population")
        total = float(Nh[sampled].sum())
        if total <= 0:
            W = np.where(sampled, nh / n_j, 0.0)
            flags.append("ps_collapsed_to_ht")
        else:
            W = np.where(sampled, Nh / total, 0.0)
        est = float(np.sum(W * ybar))
        mse = (np.sum(W * nh * mse_h) + np.sum(np.where(sampled, (1.0 - W) * (nh / n_j) * mse_h, 0.0))) / n_j
        out.append(AreaEstimate(area, est, float(mse), "PS", int(n_j), tuple(flags)))
    return out


# ---------------------------------------------------------------------------
# Area-level EBLUP (Fay-Herriot)
# ---------------------------------------------------------------------------


def fh_mse_terms(sigma2_re, D, Xbar):
    """f1, f2, f3 of the area-level EBLUP MSE, per area.

    f1 = gamma_j D_j
    f2 = (1 - gamma_j)^2 Xbar_j' [sum_k Xbar_k Xbar_k' / (D_k + s2)]^-1 Xbar_j
    f3 = D_j^2 (D_j + s2)^-3 [2 sum_k (s2 + D_k)^-2]^-1
    """
    D = np.asarray(D, dtype=np.float64)
    Xbar = np.asarray(Xbar, dtype=np.float64)
    v = D + sigma2_re
    gamma = sigma2_re / v
    A = Xbar.T @ (Xbar / v[:, None])
    q = np.einsum("jk,jk->j", Xbar, np.linalg.solve(A, Xbar.T).T)
    f1 = gamma * D
    f2 = (1.0 - gamma) ** 2 * q
    f3 = D ** 2 / v ** 3 / (2.0 * np.sum(1.0 / v ** 2))
    return f1, f2, f3


def area_eblup(direct: list, Xbar: AreaMeans, *, return_fit=False):
    """Fay-Herriot EBLUP from HT estimates and their MSEs.

    Areas lacking a direct estimate or a direct variance are left out of the
    fit and receive the synthetic prediction Xbar' beta with
    MSE s2 + Xbar' Cov(beta) Xbar.
    """
    by_area = {e.area: e for e in direct}
    pidx = _pop_index(Xbar)
    unknown = [a for a in by_area if a not in pidx]
    if unknown:
        raise SchemaError(f"direct estimates for areas absent from population: {unknown}")
    used = [a for a in Xbar.area_ids if a in by_area and by_area[a].mse is not None]
    rows = np.array([pidx[a] for a in used], dtype=np.int64)
    y = np.array([by_area[a].estimate for a in used])
    D = np.array([by_area[a].mse for a in used])
    X = Xbar.means[rows]
    fit = fit_fh_reml(y, D, X, area_ids=used)
    f1, f2, f3 = fh_mse_terms(fit.sigma2_re, fit.D, X)
    boundary = ("sigma2_re_boundary",) if fit.sigma2_re == 0 else ()
    pos = {a: k for k, a in enumerate(used)}
    out = []
    for j, area in enumerate(Xbar.area_ids):
        n_used = by_area[area].n_used if area in by_area else 0
        if area in pos:
            k = pos[area]
            flags = boundary + (("direct_variance_floored",) if fit.floored[k] else ())
            out.append(AreaEstimate(area, float(fit.predictions[k]),
                                    float(f1[k] + f2[k] + 2.0 * f3[k]), "AEBLUP", n_used, flags))
        else:
            x = Xbar.means[j]
            why = "synthetic_no_direct_variance" if area in by_area else "synthetic_unsampled"
            out.append(AreaEstimate(area, float(x @ fit.beta),
                                    float(fit.sigma2_re + x @ fit.beta_cov @ x), "AEBLUP",
                                    n_used, boundary + (why,)))
    return (out, fit) if return_fit else out


# ---------------------------------------------------------------------------
# Unit-level EBLUP (Battese-Harter-Fuller)
# ---------------------------------------------------------------------------


def h_term(sigma2_re, sigma2_eps, n, form="standard"):
    """Variance-component term of g3.

    ``form="standard"`` uses the inverse of the 2x2 information matrix of
    (s2_re, s2_eps); ``form="printed"`` takes reciprocals of its individual
    entries (and the cross entry uninverted), which can go negative.
    """
    n = np.asarray(n, dtype=np.float64)
    n = n[n > 0]
    a = sigma2_eps + n * sigma2_re
    i_vv = 0.5 * np.sum(n ** 2 / a ** 2)
    i_ee = 0.5 * np.sum((n - 1) / sigma2_eps ** 2 + 1.0 / a ** 2)
    i_ve = 0.5 * np.sum(n / a ** 2)
    if form == "printed":
        return (sigma2_eps ** 2 / i_vv + sigma2_re ** 2 / i_ee
                - 2.0 * sigma2_eps * sigma2_re * i_ve)
    if form != "standard":
        raise ValueError(f"unknown h form {form!r}")
    det = i_vv * i_ee - i_ve ** 2
    if not det > 1e-12 * i_vv * i_ee:
        # every sampled area has n = 1: the two components are not separable
        raise NumericalError("singular information matrix for the variance components")
    v_vv, v_ee, v_ve = i_ee / det, i_vv / det, -i_ve / det
    return sigma2_eps ** 2 * v_vv + sigma2_re ** 2 * v_ee - 2.0 * sigma2_eps * sigma2_re * v_ve


def unit_mse_terms(sigma2_re, sigma2_eps, n, xbar, Xbar, beta_cov, h_form="standard",
                   g1_form="standard"):
    """g1, g2, g3 per area and the scalar h for the unit-level EBLUP MSE.

    ``n``: per-area sample sizes (0 = unsampled); ``xbar``: per-area sample
    covariate means; ``Xbar``: population covariate means; ``beta_cov``: GLS
    coefficient covariance. Unsampled areas get g1 = s2_re, g2 = Xbar'Cov Xbar
    and g3 = 0.
    """
    n = np.asarray(n, dtype=np.float64)
    m = n > 0
    nn = np.where(m, n, 1.0)
    gamma = np.where(m, sigma2_re / (sigma2_re + sigma2_eps / nn), 0.0)
    if g1_form == "standard":
        g1 = np.where(m, gamma * sigma2_eps / nn, sigma2_re)
    elif g1_form == "printed":
        g1 = np.where(m, gamma * sigma2_re / nn, sigma2_re)
    else:
        raise ValueError(f"unknown g1 form {g1_form!r}")
    d = np.asarray(Xbar) - gamma[:, None] * np.asarray(xbar)
    g2 = np.einsum("jk,kl,jl->j", d, beta_cov, d)
    h = h_term(sigma2_re, sigma2_eps, n, h_form)
    g3 = np.where(m, nn ** -2 * (sigma2_re + sigma2_eps / nn) ** -3 * h, 0.0)
    return g1, g2, g3, h


def unit_eblup(sample: SampleFrame, Xbar: AreaMeans, *, fit=None, h_form="standard",
               g1_form="standard", return_fit=False):
    """Unit-level EBLUP Xbar_j' beta + v_j with MSE g1 + g2 + 2 g3."""
    if fit is None:
        fit = fit_lmm_reml(sample.y, sample.design(), sample.area_labels, Xbar.area_ids)
    g1, g2, g3, _ = unit_mse_terms(fit.sigma2_re, fit.sigma2_eps, fit.n_area, fit.xbar,
                                   Xbar.means, fit.beta_cov, h_form, g1_form)
    pred = Xbar.means @ fit.beta + fit.area_effects
    boundary = ("sigma2_re_boundary",) if fit.sigma2_re == 0 else ()
    out = []
    for j, area in enumerate(Xbar.area_ids):
        flags = boundary if fit.n_area[j] > 0 else boundary + ("synthetic_unsampled",)
        mse = float(g1[j] + g2[j] + 2.0 * g3[j])
        if mse < 0:
            flags = flags + ("negative_mse_clamped",)
            mse = 0.0
        out.append(AreaEstimate(area, float(pred[j]), mse, "UEBLUP", int(fit.n_area[j]), flags))
    return (out, fit) if return_fit else out
