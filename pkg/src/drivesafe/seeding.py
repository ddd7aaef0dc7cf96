"""Order-independent seed derivation for parallel sweeps."""
from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _label_hash(label) -> int:
    return int.from_bytes(hashlib.blake2b(str(label).encode("utf-8"), digest_size=8).digest(), "little")


def derive_seed(seed: int, *labels: str) -> int:
    """Mix an experiment seed with string labels (scenario id, setting, ...).

    The result depends only on the inputs, never on evaluation order, so a
    scenario evaluated in a worker process sees the same stream as in-process.
    """
    state = splitmix64(seed & _MASK64)
    for label in labels:
        state = splitmix64(state ^ _label_hash(label))
    return state


def rng_for(seed: int, *labels: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, *labels)))
