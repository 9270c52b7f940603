"""Named random sub-streams fanned out from a single run seed."""

import numpy as np

_STREAMS = {
    "split": 1,
    "init": 2,
    "sampling": 3,
    "corr": 4,
    "smv": 5,
    "synth": 6,
}


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``name``; same (seed, name) -> same stream."""
    return np.random.default_rng([int(seed), _STREAMS[name]])
