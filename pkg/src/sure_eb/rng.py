"""Random streams.

Every generator is PCG64 seeded from ``SeedSequence([seed, *keys, stream])``.
Stream ids are non-zero on purpose: ``SeedSequence`` ignores trailing zero
words, so ``[seed, 0, 0]`` and ``[seed]`` would otherwise be the same stream.
"""

import numpy as np

STREAM_DATA = 1
STREAM_FISSION = 2
STREAM_MODEL = 3
STREAM_FOLDS = 4


def rng_for(seed: int, replicate: int = 0, stream: int = STREAM_DATA) -> np.random.Generator:
    """Generator for one (seed, replicate, purpose) triple."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, replicate, stream])))


def model_rng(seed: int, *keys: int) -> np.random.Generator:
    """Generator for model initialization; ``keys`` tell apart e.g. cross-fitting folds."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *keys, STREAM_MODEL])))
