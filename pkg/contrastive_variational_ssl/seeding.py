"""
Named RNG substreams.

Every consumer of randomness (splitting, batch sampling, views, latent
noise, SMOTE, weight init) draws from its own stream derived from the run
seed and a name, so reordering or parallelising consumers never changes
what any single consumer sees.
"""

import zlib
from typing import Union

import numpy as np


def _spawn_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, name: str) -> np.random.Generator:
    """Create a generator for the named substream of a seed.

    Args:
        seed (int): Run seed
        name (str): Substream name, e.g. "split" or "views/12"

    Returns:
        np.random.Generator: Independent generator for this (seed, name)
    """
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(_spawn_key(name),))
    return np.random.default_rng(sequence)


def substream_seed(seed: Union[int, np.integer], name: str) -> int:
    """Derive a 32-bit integer seed for libraries that take an int random_state.

    Args:
        seed (int): Run seed
        name (str): Substream name

    Returns:
        int: Derived seed
    """
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(_spawn_key(name),))
    return int(sequence.generate_state(1, dtype=np.uint32)[0])
