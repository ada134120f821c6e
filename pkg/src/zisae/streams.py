"""Reproducible random streams.

Every random draw in the library comes from a generator keyed by a root seed
and a stage key. Keys are fixed tuples, so a replicate's stream depends only
on (seed, replicate index) and never on how work is split across workers.
"""

import numpy as np

BOOT_POPULATION = (0,)
BOOT_REPLICATE = 1
SIM_SAMPLE = 2
SIM_BOOTSTRAP = 3


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(key)))


def fresh_seed() -> int:
    """A random 63-bit root seed (for runs started without one)."""
    return int(np.random.SeedSequence().generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def describe(seed: int) -> dict:
    """Stage keys recorded in run logs."""
    return {
        "root_seed": int(seed),
        "boot_population_key": list(BOOT_POPULATION),
        "boot_replicate_key": [BOOT_REPLICATE, "b"],
        "sim_sample_key": [SIM_SAMPLE, "k"],
        "sim_bootstrap_seed": "SeedSequence(root, spawn_key=(3, k)).generate_state(1)[0]",
    }
