"""Synthetic finite populations for tests, benchmarks and simulation studies.

The two-part generator mimics an inventory-style setting: two covariates
(think canopy cover and elevation), a per-area random intercept in both the
occurrence and the amount model, and a target zero proportion per area that
is met in expectation by solving each area's occurrence intercept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .data import PopulationFrame


@dataclass(frozen=True)
class TwoPartSpec:
    gamma: tuple = (4.0, 0.8, -0.5)  # intercept, x1, x2 for the positive part
    delta_slopes: tuple = (1.2, -0.6)  # x1, x2 for the occurrence logit
    sigma_u: float = 0.6
    sigma_e: float = 1.0
    area_shift_sd: float = 0.5  # spread of area covariate centres
    n_strata: int = 3


def _area_labels(J):
    width = len(str(J))
    return [f"A{j + 1:0{width}d}" for j in range(J)]


def _covariates(rng, J, sizes, shift_sd):
    centres = rng.normal(0.0, shift_sd, (J, 2))
    codes = np.repeat(np.arange(J), sizes)
    X = centres[codes] + rng.normal(0.0, 1.0, (codes.size, 2))
    return codes, X


def _strata(X, H):
    if H <= 1:
        return np.zeros(X.shape[0], dtype=np.int64), ("s1",)
    cuts = np.quantile(X[:, 0], np.linspace(0, 1, H + 1)[1:-1])
    return np.searchsorted(cuts, X[:, 0]).astype(np.int64), tuple(f"s{h + 1}" for h in range(H))


def two_part_population(J=10, sizes=300, zero_props=None, seed=0, spec=TwoPartSpec()):
    """Zero-inflated population with a target zero share per area.

    ``zero_props`` defaults to values evenly spread over [0.6, 0.95].
    Positive responses follow the random-intercept linear model, reflected at
    zero in the rare case the linear value is negative.
    """
    rng = np.random.default_rng(seed)
    sizes = np.broadcast_to(np.asarray(sizes, dtype=np.int64), (J,)).copy()
    if zero_props is None:
        zero_props = np.linspace(0.6, 0.95, J)
    zero_props = np.broadcast_to(np.asarray(zero_props, dtype=np.float64), (J,))
    codes, X = _covariates(rng, J, sizes, spec.area_shift_sd)
    slope = X @ np.asarray(spec.delta_slopes)
    z = np.empty(codes.size, dtype=bool)
    for j in range(J):
        sel = codes == j
        target = 1.0 - zero_props[j]
        a = brentq(lambda c: expit(c + slope[sel]).mean() - target, -60.0, 60.0, xtol=1e-12)
        z[sel] = rng.random(sel.sum()) < expit(a + slope[sel])
    g = np.asarray(spec.gamma)
    u = rng.normal(0.0, spec.sigma_u, J)
    lin = g[0] + X @ g[1:] + u[codes] + rng.normal(0.0, spec.sigma_e, codes.size)
    y = np.where(z, np.abs(lin), 0.0)
    sc, levels = _strata(X, spec.n_strata)
    labels = _area_labels(J)
    return PopulationFrame(area_ids=tuple(labels), covariate_names=("x1", "x2"), codes=codes,
                           X=X, y=y, stratum_levels=levels, stratum_codes=sc)


def normal_population(J=5, sizes=1000, mean=50.0, sd=5.0, seed=0, n_strata=2):
    """Normal responses around a common mean; the well-specified direct-estimation case."""
    rng = np.random.default_rng(seed)
    sizes = np.broadcast_to(np.asarray(sizes, dtype=np.int64), (J,)).copy()
    codes, X = _covariates(rng, J, sizes, 0.0)
    y = np.abs(rng.normal(mean, sd, codes.size))
    sc, levels = _strata(X, n_strata)
    return PopulationFrame(area_ids=tuple(_area_labels(J)), covariate_names=("x1", "x2"),
                           codes=codes, X=X, y=y, stratum_levels=levels, stratum_codes=sc)
