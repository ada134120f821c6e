"""Zero-inflated two-part estimator.

A random-intercept linear model is fitted to the positive responses and a
random-intercept logistic model to the positive/zero indicator of the full
sample. Each population unit is predicted by the product of the two fitted
models and predictions are averaged by area.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.special import expit

from . import kernels
from .data import PopulationFrame, SampleFrame
from .errors import InsufficientDataError, SeparationError
from .estimators import AreaEstimate
from .mixed import GlmmFit, LmmFit, fit_glmm_logit, fit_lmm_reml, fit_logit_fixed

NONE, ALL_POSITIVE, ALL_ZERO = "none", "all_positive", "all_zero"


@dataclass(frozen=True, eq=False)
class ZiFit:
    positive_model: Optional[LmmFit]
    classify_model: Optional[GlmmFit]
    degenerate_mode: str
    area_ids: tuple
    n_area: np.ndarray  # full-sample size per area
    p: int
    flags: tuple = ()

    def components(self, area_ids=None):
        """(gamma, u, delta, w) with effects aligned to ``area_ids``.

        In the all-positive mode delta is None (probability identically 1).
        """
        area_ids = self.area_ids if area_ids is None else tuple(area_ids)
        J = len(area_ids)
        if self.degenerate_mode == ALL_ZERO:
            return np.zeros(self.p), np.zeros(J), None, np.zeros(J)
        pm = self.positive_model
        u = _align(pm.area_ids, pm.area_effects, area_ids)
        if self.degenerate_mode == ALL_POSITIVE:
            return pm.beta, u, None, np.zeros(J)
        cm = self.classify_model
        return pm.beta, u, cm.delta, _align(cm.area_ids, cm.area_effects, area_ids)

    def fit_logs(self):
        out = {"degenerate_mode": self.degenerate_mode, "flags": list(self.flags)}
        if self.positive_model is not None:
            out["positive_model"] = self.positive_model.fit_log.to_dict()
        if self.classify_model is not None:
            out["classify_model"] = self.classify_model.fit_log.to_dict()
        return out


def _align(src_ids, values, dst_ids):
    if tuple(src_ids) == tuple(dst_ids):
        return np.asarray(values, dtype=np.float64)
    index = {a: j for j, a in enumerate(src_ids)}
    return np.array([values[index[a]] if a in index else 0.0 for a in dst_ids])


def zi_fit(sample: SampleFrame, areas=None) -> ZiFit:
    """Fit both stages of the zero-inflated estimator.

    ``areas`` fixes the area universe (typically the population's); defaults
    to the sample's areas. Separation in the classifier triggers the
    fixed-effects logistic fallback, recorded in ``flags``.
    """
    areas = tuple(sample.area_ids if areas is None else areas)
    labels = sample.area_labels
    n_area = np.bincount(sample.codes_in(areas), minlength=len(areas))
    # nonzero rather than positive: bootstrap samples may hold negative values
    z = (sample.y != 0).astype(np.int64)
    p = sample.p
    if z.sum() == 0:
        return ZiFit(None, None, ALL_ZERO, areas, n_area, p, ("all_zero_sample",))
    if z.sum() == z.size:
        pm = fit_lmm_reml(sample.y, sample.design(), labels, areas)
        return ZiFit(pm, None, ALL_POSITIVE, areas, n_area, p, ("all_positive_sample",))
    pos = sample.take(np.flatnonzero(z))
    if pos.N < p + 2:
        raise InsufficientDataError(
            f"only {pos.N} positive responses for {p} coefficients; use a smaller model")
    pm = fit_lmm_reml(pos.y, pos.design(), pos.area_labels, areas)
    flags = ()
    try:
        cm = fit_glmm_logit(z, sample.design(), labels, areas)
    except SeparationError as exc:
        cm = fit_logit_fixed(z, sample.design(), labels, areas)
        flags = ("classifier_fallback_fixed_effects",)
        cm = replace(cm, fit_log=replace(cm.fit_log,
                                         notes=cm.fit_log.notes + (f"fallback after: {exc}",)))
    return ZiFit(pm, cm, NONE, areas, n_area, p, flags)


def zi_predict_unit(fit: ZiFit, x, area) -> float:
    """Product of the linear prediction and the probability of a positive value.

    ``x`` may include the leading intercept 1 (length p) or omit it (p - 1).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == fit.p - 1:
        x = np.r_[1.0, x]
    if fit.degenerate_mode == ALL_ZERO:
        return 0.0
    lin = float(x @ fit.positive_model.beta) + fit.positive_model.effect(area)
    if fit.degenerate_mode == ALL_POSITIVE:
        return lin
    cm = fit.classify_model
    return lin * float(expit(float(x @ cm.delta) + cm.effect(area)))


def zi_area_means(fit: ZiFit, X, codes, area_ids):
    """Per-area mean unit prediction over design ``X`` (with intercept).

    Returns ``(means, n_negative, max_linear)`` aligned with ``area_ids``.
    """
    J = len(area_ids)
    gamma, u, delta, w = fit.components(area_ids)
    if fit.degenerate_mode == ALL_ZERO:
        return np.zeros(J), np.zeros(J, dtype=np.int64), np.zeros(J)
    if delta is None:
        # probability one: a huge intercept makes expit exactly 1.0
        delta = np.zeros(X.shape[1])
        w = np.full(J, 1e3)
    return kernels.zi_area_means(X, gamma, u, delta, w, codes, J)


def zi_estimate(fit: ZiFit, pop: PopulationFrame) -> list:
    means, neg, mx = zi_area_means(fit, pop.design(), pop.codes, pop.area_ids)
    n_area = _align(fit.area_ids, fit.n_area, pop.area_ids).astype(np.int64)
    out = []
    for j, area in enumerate(pop.area_ids):
        flags = list(fit.flags)
        if n_area[j] == 0:
            flags.append("synthetic_unsampled")
        if neg[j]:
            flags.append(f"negative_unit_predictions:{int(neg[j])}")
        if fit.degenerate_mode != ALL_ZERO and not (0.0 <= means[j] <= max(mx[j], 0.0)):
            flags.append("zi_bound_violation")
        out.append(AreaEstimate(area, float(means[j]), None, "ZI", int(n_area[j]), tuple(flags)))
    return out
