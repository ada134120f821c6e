import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from zisae.data import PopulationFrame, SampleFrame  # noqa: E402
from zisae.synthetic import two_part_population  # noqa: E402


def subsample(pop, index, cls=SampleFrame):
    """Frame over ``index`` keeping the population's area ordering when possible."""
    index = np.asarray(index)
    present = np.unique(pop.codes[index])
    remap = np.full(pop.J, -1)
    remap[present] = np.arange(present.size)
    return cls(area_ids=tuple(pop.area_ids[j] for j in present),
               covariate_names=pop.covariate_names, codes=remap[pop.codes[index]],
               X=pop.X[index], y=pop.y[index], stratum_levels=pop.stratum_levels,
               stratum_codes=None if pop.stratum_codes is None else pop.stratum_codes[index])


def srs(pop, n, seed):
    rng = np.random.default_rng(seed)
    n = np.broadcast_to(n, (pop.J,))
    idx = np.concatenate([rng.choice(np.flatnonzero(pop.codes == j), n[j], replace=False)
                          for j in range(pop.J) if n[j] > 0])
    return subsample(pop, idx)


@pytest.fixture(scope="session")
def zi_pop():
    return two_part_population(J=8, sizes=150, seed=3)


@pytest.fixture(scope="session")
def zi_sample(zi_pop):
    return srs(zi_pop, 25, seed=4)


@pytest.fixture
def toy_pop():
    return PopulationFrame.from_arrays(
        ["A", "A", "B", "B", "B"], [[1.0], [2.0], [3.0], [4.0], [5.0]],
        [0.0, 2.0, 1.0, 0.0, 5.0], strata=["h1", "h2", "h1", "h1", "h2"])


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
