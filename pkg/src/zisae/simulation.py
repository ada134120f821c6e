"""Monte Carlo evaluation of the estimators on a fixed finite population.

Each replicate draws a stratified simple random sample (a fixed fraction of
every area with a floor), runs the selected estimators and records their
estimates and estimated RMSEs. Metrics are computed per (area, estimator)
over the replicates where that estimator succeeded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import parallel, streams
from .bootstrap import bootstrap_mse
from .data import PopulationFrame, SampleFrame, area_means
from .errors import ConfigError, SaeError, SchemaError
from .estimators import TAGS, area_eblup, horvitz_thompson, post_stratified, unit_eblup
from .zi import zi_estimate, zi_fit

Z975 = 1.959964
METRICS = ("PRB", "RMSE", "PRB_RMSE", "CICOVG")
SIM_DEFAULT_B = 200


@dataclass(frozen=True)
class SimConfig:
    K: int = 1000
    proportion: float = 0.03
    min_n: int = 2
    estimators: tuple = TAGS
    seed: int = 0
    B: int = SIM_DEFAULT_B
    workers: int = 1

    def __post_init__(self):
        if not isinstance(self.K, (int, np.integer)) or self.K < 1:
            raise ConfigError(f"K must be a positive integer, got {self.K!r}")
        if not (0.0 < self.proportion <= 1.0):
            raise ConfigError(f"proportion must lie in (0, 1], got {self.proportion!r}")
        if self.min_n < 2:
            raise ConfigError(f"min_n must be at least 2, got {self.min_n!r}")
        if self.B < 1:
            raise ConfigError(f"B must be at least 1, got {self.B!r}")
        est = tuple(self.estimators)
        bad = [e for e in est if e not in TAGS]
        if bad or not est:
            raise ConfigError(f"unknown or empty estimator selection {bad or est}; choose from {TAGS}")
        object.__setattr__(self, "estimators", tuple(e for e in TAGS if e in est))


def sample_sizes(counts, proportion, min_n=2) -> np.ndarray:
    """max(round(proportion * N_j), min_n) capped at N_j; ties round to even."""
    counts = np.asarray(counts, dtype=np.int64)
    n = np.maximum(np.round(proportion * counts).astype(np.int64), min_n)
    return np.minimum(n, counts)


def draw_sim_sample(pop: PopulationFrame, cfg: SimConfig, seed=None, *, rng=None,
                    return_index=False):
    """Per-area simple random sample without replacement."""
    if np.any(np.isnan(pop.y)):
        raise SchemaError("simulation population needs a response on every unit")
    if rng is None:
        rng = np.random.default_rng(seed)
    n = sample_sizes(pop.counts, cfg.proportion, cfg.min_n)
    order = np.argsort(pop.codes, kind="stable")
    bounds = np.r_[0, np.cumsum(pop.counts)]
    idx = np.concatenate([rng.choice(order[bounds[j]:bounds[j + 1]], n[j], replace=False)
                          for j in range(pop.J)])
    sample = SampleFrame(area_ids=pop.area_ids, covariate_names=pop.covariate_names,
                         codes=pop.codes[idx], X=pop.X[idx], y=pop.y[idx],
                         stratum_levels=pop.stratum_levels,
                         stratum_codes=None if pop.stratum_codes is None else pop.stratum_codes[idx])
    return (sample, idx) if return_index else sample


def true_means(pop: PopulationFrame) -> np.ndarray:
    if np.any(np.isnan(pop.y)):
        raise SchemaError("true means need a response on every unit")
    return np.bincount(pop.codes, weights=pop.y, minlength=pop.J) / pop.counts


# ---------------------------------------------------------------------------
# Metrics. Inputs are per-replicate arrays; NaN marks a missing replicate.
# ---------------------------------------------------------------------------


def _valid(a):
    a = np.asarray(a, dtype=np.float64)
    return a[~np.isnan(a)]


def prb(estimates, truth) -> float:
    """Percent relative bias; NaN when the truth is zero or nothing is valid."""
    e = _valid(estimates)
    if truth == 0 or e.size == 0:
        return math.nan
    return 100.0 * (e.mean() - truth) / truth


def empirical_rmse(estimates, truth) -> float:
    e = _valid(estimates)
    if e.size == 0:
        return math.nan
    return math.sqrt(np.mean((e - truth) ** 2))


def prb_rmse(rmse_estimates, empirical) -> float:
    r = _valid(rmse_estimates)
    if not empirical > 0 or r.size == 0:
        return math.nan
    return 100.0 * (r.mean() - empirical) / empirical


def ci_coverage(estimates, rmse_estimates, truth) -> float:
    """Share of replicates whose normal 95% interval contains the truth.

    Replicates lacking an estimate or an RMSE estimate are left out.
    """
    e = np.asarray(estimates, dtype=np.float64)
    r = np.asarray(rmse_estimates, dtype=np.float64)
    ok = ~(np.isnan(e) | np.isnan(r))
    if not ok.any():
        return math.nan
    return float(np.mean(np.abs(e[ok] - truth) <= Z975 * r[ok]))


def relative_efficiency(model_mse, direct_mse) -> np.ndarray:
    """direct_mse / model_mse per area; NaN where either is zero or missing."""
    m = np.asarray(model_mse, dtype=np.float64)
    d = np.asarray(direct_mse, dtype=np.float64)
    out = np.full(np.broadcast(m, d).shape, np.nan)
    ok = (m > 0) & (d > 0)
    np.divide(d, m, out=out, where=ok)
    return out


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SimulationReport:
    area_ids: tuple
    estimators: tuple
    truth: np.ndarray  # (J,)
    estimates: np.ndarray  # (K, L, J)
    rmse_hat: np.ndarray  # (K, L, J)
    metrics: dict  # metric name -> (L, J)
    sample_sizes: np.ndarray  # (J,)
    failures: list = field(default_factory=list)  # (replicate, estimator, message)
    metric_flags: list = field(default_factory=list)  # (area, estimator, flag)
    config: SimConfig = None

    def metric(self, name, estimator, area=None):
        m = self.metrics[name][self.estimators.index(estimator)]
        return m if area is None else float(m[self.area_ids.index(area)])

    def long_rows(self):
        """(area, estimator, metric, value) rows in a fixed order."""
        rows = []
        for j, area in enumerate(self.area_ids):
            for l, est in enumerate(self.estimators):
                for name in METRICS:
                    rows.append((area, est, name, float(self.metrics[name][l, j])))
        return rows

    def replicate_rows(self):
        rows = []
        K = self.estimates.shape[0]
        for k in range(K):
            for l, est in enumerate(self.estimators):
                for j, area in enumerate(self.area_ids):
                    rows.append((k, area, est, float(self.estimates[k, l, j]),
                                 float(self.rmse_hat[k, l, j])))
        return rows


def compute_metrics(truth, estimates, rmse_hat):
    """All four metrics from (K, L, J) replicate arrays."""
    _, L, J = estimates.shape
    out = {name: np.full((L, J), np.nan) for name in METRICS}
    for l in range(L):
        for j in range(J):
            e, r, t = estimates[:, l, j], rmse_hat[:, l, j], truth[j]
            out["PRB"][l, j] = prb(e, t)
            emp = empirical_rmse(e, t)
            out["RMSE"][l, j] = emp
            out["PRB_RMSE"][l, j] = prb_rmse(r, emp)
            out["CICOVG"][l, j] = ci_coverage(e, r, t)
    return out


def bootstrap_seed(root, k) -> int:
    ss = np.random.SeedSequence(int(root), spawn_key=(streams.SIM_BOOTSTRAP, int(k)))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _fill(row_est, row_rmse, l, index, estimates):
    for e in estimates:
        j = index[e.area]
        row_est[l, j] = e.estimate
        row_rmse[l, j] = math.nan if e.mse is None else e.rmse


def _sim_replicate(ctx, k):
    pop, cfg, Xbar, sizes = ctx
    index = {a: j for j, a in enumerate(pop.area_ids)}
    L, J = len(cfg.estimators), pop.J
    est = np.full((L, J), np.nan)
    rmse = np.full((L, J), np.nan)
    failures = []
    sample = draw_sim_sample(pop, cfg, rng=streams.stream(cfg.seed, streams.SIM_SAMPLE, k))
    ht = None
    for l, tag in enumerate(cfg.estimators):
        try:
            if tag == "HT":
                ht = horvitz_thompson(sample)
                res = ht
            elif tag == "PS":
                res = post_stratified(sample, Xbar)
            elif tag == "AEBLUP":
                res = area_eblup(ht if ht is not None else horvitz_thompson(sample), Xbar)
            elif tag == "UEBLUP":
                res = unit_eblup(sample, Xbar)
            else:
                fit = zi_fit(sample, pop.area_ids)
                res = zi_estimate(fit, pop)
                boot = bootstrap_mse(fit, pop, sizes, B=cfg.B, seed=bootstrap_seed(cfg.seed, k),
                                     workers=1, keep_replicates=False)
                for e, m in zip(res, boot.mse):
                    j = index[e.area]
                    est[l, j] = e.estimate
                    rmse[l, j] = math.sqrt(m)
                continue
        except SaeError as exc:
            failures.append((k, tag, f"{type(exc).__name__}: {exc}"))
            continue
        _fill(est, rmse, l, index, res)
    return est, rmse, failures


def run_simulation(pop: PopulationFrame, cfg: SimConfig) -> SimulationReport:
    if "PS" in cfg.estimators and not pop.has_strata:
        raise ConfigError("post-stratified estimator selected but the population has no strata")
    truth = true_means(pop)
    Xbar = area_means(pop)
    sizes = sample_sizes(pop.counts, cfg.proportion, cfg.min_n)
    results = parallel.run_ordered(_sim_replicate, (pop, cfg, Xbar, sizes), range(cfg.K),
                                   cfg.workers)
    estimates = np.stack([r[0] for r in results])
    rmse_hat = np.stack([r[1] for r in results])
    failures = [f for r in results for f in r[2]]
    metrics = compute_metrics(truth, estimates, rmse_hat)
    flags = []
    for j, area in enumerate(pop.area_ids):
        for l, tag in enumerate(cfg.estimators):
            if truth[j] == 0:
                flags.append((area, tag, "prb_undefined_zero_truth"))
            if not metrics["RMSE"][l, j] > 0:
                flags.append((area, tag, "prb_rmse_undefined_zero_empirical"))
            missing = int(np.sum(np.isnan(rmse_hat[:, l, j]) & ~np.isnan(estimates[:, l, j])))
            if missing:
                flags.append((area, tag, f"coverage_excluded:{missing}"))
    return SimulationReport(pop.area_ids, cfg.estimators, truth, estimates, rmse_hat, metrics,
                            sizes, failures, flags, cfg)
