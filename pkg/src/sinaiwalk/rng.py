"""Keyed counter-based random numbers.

Every random quantity in the package is a pure function of a 64-bit key and
a counter: ``u = finalize(key + counter * GOLDEN)``, the SplitMix64 output
function. Keys are derived from the master seed by hashing a tag path, so
environment sites, walk steps and replicas never share a stream and the
order of evaluation never changes a value.
"""

from __future__ import annotations

import hashlib

import numba as nb
import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
REPLICA_STRIDE = np.uint64(0xD1B54A32D192ED03)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_LOW32 = np.uint64(0xFFFFFFFF)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S32 = np.uint64(32)
_S11 = np.uint64(11)

TWO32 = 4294967296
MASK64 = (1 << 64) - 1


def derive_key(seed: int, *tags: object) -> int:
    """Hash ``(seed, *tags)`` into a 64-bit key.

    Tags are rendered with ``repr`` so ``("walk", 3)`` and ``("walk", "3")``
    give different keys.
    """
    h = hashlib.blake2b(digest_size=8, person=b"sinaiwalk")
    h.update(repr((int(seed) & MASK64,) + tuple(tags)).encode())
    return int.from_bytes(h.digest(), "little")


def mix64_py(z: int) -> int:
    """Pure-Python SplitMix64 finalizer (reference for the vectorized paths)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def hash_words(key: int, counters: np.ndarray) -> np.ndarray:
    """Vectorized ``finalize(key + counter * GOLDEN)`` over int64 counters."""
    c = np.asarray(counters, dtype=np.int64).view(np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(key) + c * GOLDEN
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def hash_uniforms(key: int, counters: np.ndarray) -> np.ndarray:
    """Uniforms on [0, 1) with 53-bit resolution, one per counter."""
    return (hash_words(key, counters) >> _S11).astype(np.float64) * (1.0 / 9007199254740992.0)


def replica_key(key: int, index: int) -> int:
    """Key of the ``index``-th replica stream under ``key`` (matches the kernels)."""
    return mix64_py((key + (index + 1) * int(REPLICA_STRIDE)) & MASK64)


def step_bits(key: int, t: int) -> int:
    """The 32 random bits that drive step ``t`` of a walk keyed by ``key``.

    One 64-bit word feeds two consecutive steps: low half for even ``t``,
    high half for odd ``t``.
    """
    z = mix64_py((key + (t >> 1) * int(GOLDEN)) & MASK64)
    return (z >> 32) if t & 1 else (z & 0xFFFFFFFF)


@nb.njit(inline="always")
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(inline="always")
def word(key, ctr):
    return mix64(key + ctr * GOLDEN)


@nb.njit(inline="always")
def sub_key(key, index):
    return mix64(key + (np.uint64(index) + np.uint64(1)) * REPLICA_STRIDE)


@nb.njit(inline="always")
def low32(z):
    return z & _LOW32


@nb.njit(inline="always")
def high32(z):
    return z >> _S32
