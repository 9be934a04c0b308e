"""Partitioned random streams.

Every consumer of randomness (channels, shadowing, scheduling, data, SGD,
noise) gets its own generator keyed by ``(seed, purpose, *indices)`` so
draws never interleave and re-ordering the simulation loop cannot change
any individual draw.
"""

import numpy as np

# Fixed tags; appending new purposes is safe, renumbering is not.
_PURPOSES = {
    "geometry": 1,
    "shadowing": 2,
    "channel": 3,
    "schedule": 4,
    "placement": 5,
    "data": 6,
    "partition": 7,
    "init": 8,
    "sgd": 9,
    "downlink": 10,
    "uplink": 11,
    "eig": 12,
    "calibration": 13,
}


def substream(seed: int, purpose: str, *keys: int) -> np.random.Generator:
    """Return an independent generator for ``purpose`` at the given indices."""
    try:
        tag = _PURPOSES[purpose]
    except KeyError:
        raise ValueError(f"unknown random stream purpose {purpose!r}") from None
    entropy = [int(seed), tag, *(int(k) for k in keys)]
    if any(e < 0 for e in entropy):
        raise ValueError("seed and stream keys must be non-negative")
    return np.random.default_rng(np.random.SeedSequence(entropy))
