"""Derive independent RNG streams from one top-level seed.

Each stream is keyed by a purpose string plus integers (round, device id,
model id, ...). Keys are folded in with the splitmix64 finalizer, so streams
do not depend on the order in which other streams were consumed.
"""

import hashlib

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def _key_int(key) -> int:
    if isinstance(key, str):
        return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little")
    return int(key) & _MASK


def derive_seed(seed: int, *keys) -> int:
    h = splitmix64(int(seed) & _MASK)
    for k in keys:
        h = splitmix64(h ^ _key_int(k))
    return h


def stream(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))
