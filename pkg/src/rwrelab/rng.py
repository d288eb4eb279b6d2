"""Counter-based random streams.

Every draw is a pure function of ``(stream key, counter)``: the value at
counter ``n`` is the ``n``-th output of a splitmix64 generator whose state
starts at the key.  Nothing is carried between draws, so sites and steps can
be generated in any order, in parallel, and reproduced exactly.
"""

from __future__ import annotations

import hashlib

import numba
import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV53 = 1.0 / (1 << 53)


def mix64(z: int) -> int:
    """splitmix64 finalizer on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def label_hash(label: str) -> int:
    return int.from_bytes(hashlib.blake2b(label.encode(), digest_size=8).digest(), "little")


def stream_key(seed: int, label: str) -> int:
    """Key of the stream named ``label`` under ``seed``.

    Environment and walk randomness use different labels so that one
    environment can be reused with many walk seeds.
    """
    return mix64(mix64(seed & MASK64) ^ label_hash(label))


def derive_seed(master: int, label: str, index: int) -> int:
    """64-bit child seed number ``index`` of ``master`` for purpose ``label``."""
    return mix64(stream_key(master, label) + (index + 1) * GOLDEN)


def replicate_key(key: int, replicate: int) -> int:
    return mix64(key ^ mix64(replicate * GOLDEN + 0x632BE59BD9B4E019))


def uniform(key: int, counter: int) -> float:
    """Scalar draw in [0, 1)."""
    return (mix64(key + (counter + 1) * GOLDEN) >> 11) * _INV53


def uniform_array(key: int, counters: np.ndarray) -> np.ndarray:
    """Vectorised :func:`uniform` over an integer array of counters."""
    c = np.asarray(counters, dtype=np.uint64)
    z = np.uint64(key) + (c + np.uint64(1)) * np.uint64(GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * _INV53


@numba.njit(inline="always")
def uniform_jit(key, counter):
    z = numba.uint64(key) + (numba.uint64(counter) + numba.uint64(1)) * numba.uint64(GOLDEN)
    z = (z ^ (z >> numba.uint64(30))) * numba.uint64(_M1)
    z = (z ^ (z >> numba.uint64(27))) * numba.uint64(_M2)
    z = z ^ (z >> numba.uint64(31))
    return numba.float64(z >> numba.uint64(11)) * _INV53
