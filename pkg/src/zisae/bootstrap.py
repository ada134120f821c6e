"""Parametric bootstrap MSE for the zero-inflated estimator.

One bootstrap population is generated from the fit to the original sample.
B stratified with-replacement samples are drawn from it, the full two-part
estimator is refitted on each, and the per-area MSE is the mean squared
deviation of the replicate estimates from the bootstrap population means.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from . import parallel, streams
from .data import BootSampleFrame, PopulationFrame
from .errors import NumericalError, SaeError, SchemaError
from .zi import ALL_POSITIVE, ALL_ZERO, ZiFit, zi_area_means, zi_fit

DEFAULT_B = 500
FAILURE_WARN_FRACTION = 0.10


@dataclass(frozen=True, eq=False)
class BootPopulation:
    responses: np.ndarray  # y-tilde, aligned with the population's unit order
    indicators: np.ndarray  # z-tilde
    synthetic_means: np.ndarray  # mu-tilde per area
    area_effects: np.ndarray  # u-tilde per area
    seed: int
    stream_key: tuple = streams.BOOT_POPULATION

    @property
    def n_negative(self) -> int:
        return int(np.sum(self.responses < 0))


@dataclass(frozen=True, eq=False)
class BootstrapMse:
    area_ids: tuple
    mse: np.ndarray
    B: int
    n_success: int
    n_failed: int
    n_fallback: int
    synthetic_means: np.ndarray
    replicate_estimates: Optional[np.ndarray] = None  # (B, J); NaN rows for failures
    failures: list = field(default_factory=list)
    flags: tuple = ()


def generate_boot_population(fit: ZiFit, pop: PopulationFrame, seed) -> BootPopulation:
    """Draw the bootstrap population from the fitted two-part model."""
    if pop.p != fit.p:
        raise SchemaError(f"population has {pop.p - 1} covariates, fit expects {fit.p - 1}")
    J, N = pop.J, pop.N
    counts = pop.counts
    if fit.degenerate_mode == ALL_ZERO:
        zeros = np.zeros(N)
        return BootPopulation(zeros, np.zeros(N, dtype=np.int64), np.zeros(J), np.zeros(J), int(seed))
    rng = streams.stream(seed, *streams.BOOT_POPULATION)
    pm = fit.positive_model
    u_t = rng.normal(0.0, math.sqrt(pm.sigma2_re), J)
    eps = rng.normal(0.0, math.sqrt(pm.sigma2_eps), N)
    unif = rng.random(N)
    X = pop.design()
    gamma, _, delta, w = fit.components(pop.area_ids)
    if fit.degenerate_mode == ALL_POSITIVE:
        prob = np.ones(N)
    else:
        prob = expit(X @ delta + w[pop.codes])
    z = (unif < prob).astype(np.int64)
    y = (X @ gamma + u_t[pop.codes] + eps) * z
    mu = np.bincount(pop.codes, weights=y, minlength=J) / counts
    return BootPopulation(y, z, mu, u_t, int(seed))


def _members(pop):
    order = np.argsort(pop.codes, kind="stable")
    bounds = np.r_[0, np.cumsum(pop.counts)]
    return [order[bounds[j]:bounds[j + 1]] for j in range(pop.J)]


def _sizes_array(sizes, pop):
    if isinstance(sizes, dict):
        unknown = [a for a in sizes if a not in pop.area_ids]
        if unknown:
            raise SchemaError(f"requested areas absent from population: {unknown}")
        return np.array([int(sizes.get(a, 0)) for a in pop.area_ids], dtype=np.int64)
    arr = np.asarray(sizes, dtype=np.int64)
    if arr.shape != (pop.J,):
        raise SchemaError("sizes must give one count per population area")
    return arr


def draw_boot_sample(bp: BootPopulation, pop: PopulationFrame, sizes, seed=None, *, rng=None,
                     members=None) -> BootSampleFrame:
    """Stratified with-replacement sample of n_j units per area."""
    n = _sizes_array(sizes, pop)
    if rng is None:
        rng = np.random.default_rng(seed)
    members = _members(pop) if members is None else members
    picks = [m[rng.integers(0, m.size, n[j])] for j, m in enumerate(members) if n[j] > 0]
    idx = np.concatenate(picks)
    codes = pop.codes[idx]
    present = np.flatnonzero(n > 0)
    remap = np.full(pop.J, -1, dtype=np.int64)
    remap[present] = np.arange(present.size)
    return BootSampleFrame(
        area_ids=tuple(pop.area_ids[j] for j in present), covariate_names=pop.covariate_names,
        codes=remap[codes], X=pop.X[idx], y=bp.responses[idx],
        stratum_levels=pop.stratum_levels,
        stratum_codes=None if pop.stratum_codes is None else pop.stratum_codes[idx])


def _replicate(ctx, b):
    pop, bp, sizes, members, seed, X = ctx
    rng = streams.stream(seed, streams.BOOT_REPLICATE, b)
    sample = draw_boot_sample(bp, pop, sizes, rng=rng, members=members)
    try:
        fit = zi_fit(sample, areas=pop.area_ids)
        est = zi_area_means(fit, X, pop.codes, pop.area_ids)[0]
    except SaeError as exc:
        return None, f"{type(exc).__name__}: {exc}", False
    return est, None, "classifier_fallback_fixed_effects" in fit.flags


def bootstrap_mse(fit: ZiFit, pop: PopulationFrame, sizes, B=DEFAULT_B, seed=0, workers=1,
                  keep_replicates=True) -> BootstrapMse:
    if B < 1:
        raise ValueError("B must be at least 1")
    n = _sizes_array(sizes, pop)
    bp = generate_boot_population(fit, pop, seed)
    ctx = (pop, bp, n, _members(pop), int(seed), pop.design())
    results = parallel.run_ordered(_replicate, ctx, range(B), workers)
    J = pop.J
    reps = np.full((B, J), np.nan)
    failures, n_fallback = [], 0
    for b, (est, err, fb) in enumerate(results):
        if est is None:
            failures.append((b, err))
        else:
            reps[b] = est
            n_fallback += int(fb)
    ok = ~np.isnan(reps[:, 0])
    n_ok = int(ok.sum())
    if n_ok == 0:
        raise NumericalError(f"all {B} bootstrap replicates failed; first: {failures[0][1]}")
    dev = reps[ok] - bp.synthetic_means
    mse = np.sum(dev * dev, axis=0) / n_ok
    flags = []
    if len(failures) > FAILURE_WARN_FRACTION * B:
        msg = f"{len(failures)} of {B} bootstrap replicates failed"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        flags.append("bootstrap_failure_fraction_high")
    if bp.n_negative:
        flags.append(f"boot_population_negative_responses:{bp.n_negative}")
    return BootstrapMse(pop.area_ids, mse, B, n_ok, len(failures), n_fallback,
                        bp.synthetic_means, reps if keep_replicates else None, failures,
                        tuple(flags))
