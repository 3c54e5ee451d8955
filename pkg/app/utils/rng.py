"""Counter-based random streams.

Every stochastic component draws from its own Philox generator keyed by
(seed, replica, purpose, extra...). Streams never share state, so the
order in which components consume randomness does not leak between them
and replicas are reproducible in any worker.
"""
import zlib
from typing import Union

import numpy as np

Key = Union[int, str]


def _as_int(key: Key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key)


def make_rng(seed: int, *keys: Key) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_as_int(k) for k in keys))
    return np.random.Generator(np.random.Philox(seq))


def child_seed(rng: np.random.Generator) -> int:
    """Draw a 32-bit seed for libraries that only accept ints"""
    return int(rng.integers(0, 2**31 - 1))
