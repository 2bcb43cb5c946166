"""Labelled seed derivation so that every stage owns an independent stream."""
import hashlib

import numpy as np


def derive_seed(master: int, *labels) -> int:
    """Map ``(master, label, ...)`` to a 63-bit seed, stable across runs and platforms."""
    key = "/".join([str(int(master))] + [str(x) for x in labels]).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
