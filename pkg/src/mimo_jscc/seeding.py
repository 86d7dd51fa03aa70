"""Deterministic derivation of independent random streams."""

import numpy as np


def child_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for one (seed, *key) coordinate.

    Streams for different keys are statistically independent, and the mapping
    is stable across runs and platforms, so per-image streams do not depend on
    iteration order or on how many other streams were drawn.
    """
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)))
