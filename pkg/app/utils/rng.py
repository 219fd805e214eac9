"""
Random streams for filters and experiments.

Every consumer gets its own Philox counter-based generator derived from a
seed and a tuple of integer keys, so parallel repeats never share state and
a run is reproducible from (seed, keys) alone.
"""
import numpy as np
from typing import List

# stream keys keep the data-generation stream apart from filter repeats
DATA_STREAM = 0
FILTER_STREAM = 1
REFERENCE_STREAM = 2
ENSEMBLE_STREAM = 3


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based generator for (seed, *keys)"""
    entropy: List[int] = [int(seed)] + [int(k) for k in keys]
    if any(e < 0 for e in entropy):
        raise ValueError(f"Seeds and stream keys must be non-negative, got {entropy}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
