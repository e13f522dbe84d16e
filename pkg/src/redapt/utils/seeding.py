"""
Seeded random streams.

All randomness in the pipeline is drawn from numpy Generators built from an
explicit key tuple, so a run is replayable from its seed alone.
"""

import numpy as np

# Stream tags keep component draws independent of each other
STREAM_FEATURE_EXTRACTOR = 0
STREAM_LAYER = 1
STREAM_REDAPT = 2
STREAM_HEAD = 3
STREAM_REINIT = 4
STREAM_LENGTH_ADAPTOR = 5
STREAM_BATCH = 6
STREAM_CLIP = 7
STREAM_AUGMENT = 8


def rng_for(*key):
    """
    Build a numpy Generator from a tuple of non-negative integers.

    Args:
        *key: integers identifying the stream (e.g. seed, tag, index)

    Returns:
        np.random.Generator
    """
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def counter_rng(seed, layer_id, step):
    """
    Counter-based generator keyed by (seed, layer-id, step).

    Philox is a counter-based bit generator, so the same key always yields
    the same stream regardless of what was drawn before.
    """
    key = np.random.SeedSequence([int(seed), int(layer_id), int(step)])
    return np.random.Generator(np.random.Philox(key))
