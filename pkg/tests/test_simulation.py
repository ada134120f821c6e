import math

import numpy as np
import pytest

from zisae import simulation as sim
from zisae.data import PopulationFrame, area_means
from zisae.errors import ConfigError, NumericalError
from zisae.simulation import (SimConfig, ci_coverage, compute_metrics, draw_sim_sample,
                              empirical_rmse, prb, prb_rmse, relative_efficiency, run_simulation,
                              sample_sizes, true_means)
from zisae.synthetic import two_part_population


def test_config_validation():
    for bad in ({"K": 0}, {"proportion": 0.0}, {"proportion": 1.5}, {"min_n": 1},
                {"estimators": ("XX",)}, {"B": 0}):
        with pytest.raises(ConfigError):
            SimConfig(**bad)
    assert SimConfig(estimators=("ZI", "HT")).estimators == ("HT", "ZI")


def test_sample_size_rule():
    assert sample_sizes([100], 0.03).tolist() == [3]
    assert sample_sizes([40], 0.03).tolist() == [2]
    assert sample_sizes([1], 0.03).tolist() == [1]
    # round half to even: 0.5 * 5 = 2.5 -> 2, 0.5 * 7 = 3.5 -> 4
    assert sample_sizes([5, 7], 0.5, min_n=2).tolist() == [2, 4]


def test_sizes_range_on_large_population():
    rng = np.random.default_rng(0)
    counts = np.clip(np.round(rng.lognormal(np.log(600), 0.9, 17)), 30, 2000).astype(int)
    cfg = SimConfig(K=1, proportion=0.03)
    n = sample_sizes(counts, cfg.proportion, cfg.min_n)
    assert n.min() >= 2 and n.max() <= 60


def test_draw_without_replacement():
    pop = two_part_population(J=4, sizes=50, seed=1)
    cfg = SimConfig(K=1, proportion=0.2)
    for seed in range(20):
        s, idx = draw_sim_sample(pop, cfg, seed, return_index=True)
        assert np.unique(idx).size == idx.size
        assert s.counts.tolist() == [10] * 4
        assert np.array_equal(s.y, pop.y[idx])


def test_true_means():
    pop = PopulationFrame.from_arrays(["a", "a", "a", "b"], np.zeros((4, 1)), [0.0, 0.0, 6.0, 3.0])
    assert true_means(pop).tolist() == [2.0, 3.0]
    pop = two_part_population(J=3, sizes=20, seed=2)
    y_as_covariate = PopulationFrame.from_arrays([pop.area_ids[c] for c in pop.codes], np.c_[pop.y])
    assert np.allclose(true_means(pop), area_means(y_as_covariate).means[:, 1], rtol=1e-14)


def test_prb():
    assert prb([2.0, 2.0], 2.0) == 0.0
    assert prb([2.0, 2.2], 2.0) == pytest.approx(5.0)
    assert prb(np.array([2.0, 2.2]) * 7, 14.0) == pytest.approx(5.0)
    assert math.isnan(prb([1.0], 0.0))


def test_empirical_rmse():
    assert empirical_rmse([3.0, 3.0], 3.0) == 0.0
    assert empirical_rmse([1.0, 3.0], 2.0) == 1.0
    e = np.array([2.5, 2.9, 3.7])
    assert empirical_rmse(e, 2.0) >= abs(e.mean() - 2.0)


def test_prb_rmse():
    assert prb_rmse([1.0, 1.0], 1.0) == 0.0
    assert prb_rmse([0.7, 0.9], 1.0) == pytest.approx(-20.0)
    assert prb_rmse([1.3], 1.0) > 0 > prb_rmse([0.7], 1.0)
    assert math.isnan(prb_rmse([1.0], 0.0))


def test_ci_coverage():
    e = np.array([1.0, 2.0, 3.0])
    assert ci_coverage(e, [1e9] * 3, 2.5) == 1.0
    assert ci_coverage(e, [0.0] * 3, 2.5) == 0.0
    assert ci_coverage(e, [np.nan, 1.0, 1.0], 2.5) == 1.0
    rng = np.random.default_rng(0)
    est, r = rng.normal(size=50), rng.uniform(0.1, 2, 50)
    assert ci_coverage(est, 1.5 * r, 0.0) >= ci_coverage(est, r, 0.0)


def test_relative_efficiency():
    assert relative_efficiency(2.0, 2.0) == 1.0
    assert relative_efficiency(1.0, 4.0) == 4.0
    assert math.isnan(relative_efficiency(1.0, 0.0))
    assert math.isnan(relative_efficiency(0.0, 1.0))


@pytest.fixture(scope="module")
def small_report():
    pop = two_part_population(J=5, sizes=120, seed=6)
    cfg = SimConfig(K=6, proportion=0.15, estimators=("HT", "PS", "AEBLUP", "UEBLUP", "ZI"), seed=3, B=5)
    return pop, cfg, run_simulation(pop, cfg)


def test_report_shapes_and_invariants(small_report):
    pop, cfg, rep = small_report
    assert rep.estimates.shape == (6, 5, 5)
    assert np.all((rep.metrics["CICOVG"] >= 0) & (rep.metrics["CICOVG"] <= 1))
    assert np.all(rep.metrics["RMSE"] >= 0)
    assert len(rep.long_rows()) == 5 * 5 * 4
    assert len(rep.replicate_rows()) == 6 * 5 * 5


def test_metrics_recomputable(small_report):
    _, _, rep = small_report
    again = compute_metrics(rep.truth, rep.estimates, rep.rmse_hat)
    for name in sim.METRICS:
        assert np.allclose(again[name], rep.metrics[name], rtol=1e-12, atol=1e-12, equal_nan=True)


def test_report_deterministic(small_report):
    pop, cfg, rep = small_report
    again = run_simulation(pop, cfg)
    assert np.array_equal(rep.estimates, again.estimates, equal_nan=True)
    par = run_simulation(pop, SimConfig(**{**cfg.__dict__, "workers": 2}))
    assert np.array_equal(rep.rmse_hat, par.rmse_hat, equal_nan=True)


def test_exact_estimator_gives_zero_metrics(monkeypatch):
    pop = two_part_population(J=3, sizes=30, seed=1)
    truth = true_means(pop)

    def perfect(sample):
        from zisae.estimators import AreaEstimate
        return [AreaEstimate(a, float(t), 0.0, "HT", 2) for a, t in zip(pop.area_ids, truth)]

    monkeypatch.setattr(sim, "horvitz_thompson", perfect)
    rep = run_simulation(pop, SimConfig(K=1, proportion=0.1, estimators=("HT",)))
    assert np.all(rep.metrics["PRB"] == 0) and np.all(rep.metrics["RMSE"] == 0)


def test_failures_are_missing_cells(monkeypatch):
    pop = two_part_population(J=3, sizes=30, seed=1)
    calls = {"n": 0}
    orig = sim.unit_eblup

    def flaky(sample, Xbar):
        calls["n"] += 1
        if calls["n"] == 2:
            raise NumericalError("boom")
        return orig(sample, Xbar)

    monkeypatch.setattr(sim, "unit_eblup", flaky)
    rep = run_simulation(pop, SimConfig(K=3, proportion=0.2, estimators=("HT", "UEBLUP")))
    assert rep.failures == [(1, "UEBLUP", "NumericalError: boom")]
    assert np.all(np.isnan(rep.estimates[1, 1])) and not np.any(np.isnan(rep.estimates[:, 0]))
    assert not np.any(np.isnan(rep.metrics["RMSE"]))


def test_ps_needs_strata():
    pop = PopulationFrame.from_arrays(["a"] * 10, np.zeros((10, 1)), np.ones(10))
    with pytest.raises(ConfigError):
        run_simulation(pop, SimConfig(K=1, estimators=("PS",)))
