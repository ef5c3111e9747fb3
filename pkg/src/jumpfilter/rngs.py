"""Reproducible random streams: (seed, index) -> independent generator.

Philox is counter-based, so streams keyed by (seed, index) are identical
across platforms and independent of how many are created.
"""
from __future__ import annotations

import numpy as np


def stream(seed: int, index: int = 0) -> np.random.Generator:
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be nonnegative")
    return np.random.Generator(np.random.Philox(key=[np.uint64(seed), np.uint64(index)]))
