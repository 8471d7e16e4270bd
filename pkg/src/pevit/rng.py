"""Seed expansion.

Every random consumer gets its own stream derived from one integer seed, so
turning a component on or off never shifts the draws seen by the others.
"""

import numpy as np

STREAMS = {
    "init": 0,
    "data_order": 1,
    "augment": 2,
    "droppath": 3,
    "mixup": 4,
    "synth": 5,
    "bench": 6,
}


def stream(seed: int, name: str, *counters: int) -> np.random.Generator:
    """Return the generator for consumer ``name`` at position ``counters``.

    ``stream(seed, "augment", epoch, index)`` is a pure function of its
    arguments; the same call always yields the same generator state.
    """
    if name not in STREAMS:
        raise KeyError(f"unknown random stream {name!r}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(STREAMS[name], *map(int, counters)))
    return np.random.Generator(np.random.PCG64(ss))
