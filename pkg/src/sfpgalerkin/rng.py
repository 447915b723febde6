"""Stateless counter-based Gaussian draws.

Every draw is a pure function of ``(seed, stream, counter)``: a SplitMix64
finaliser hashes the triple into 64 random bits, and pairs of uniforms are
turned into normals by Box-Muller.  The compiled kernels implement the same
hash so particle noise can be generated inside ``nogil`` loops and still
agree with this module.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
STREAM_MULT = np.uint64(0xD2B74407B1CE6E93)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO_M53 = 2.0**-53

MASK64 = (1 << 64) - 1


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _mix_int(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stream_key(seed: int, stream) -> np.ndarray:
    """64-bit key for ``(seed, stream)``; ``stream`` may be an array."""
    base = np.uint64(_mix_int(int(seed) ^ 0x9E3779B97F4A7C15))
    s = np.asarray(stream, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix(base ^ (s * STREAM_MULT + GOLDEN))


def derive_seed(base_seed: int, index: int) -> int:
    """Child seed for realization ``index`` of an ensemble."""
    return _mix_int(_mix_int(int(base_seed) + 0x632BE59BD9B4E019) ^ (int(index) * 0x9E3779B97F4A7C15 + 1))


def uniforms(key, counter) -> np.ndarray:
    """Uniform draws in the open interval (0, 1)."""
    key = np.asarray(key, dtype=np.uint64)
    c = np.asarray(counter, dtype=np.uint64)
    with np.errstate(over="ignore"):
        bits = _mix(key + (c + np.uint64(1)) * GOLDEN)
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53


def normals(seed: int, stream, counter) -> np.ndarray:
    """Standard normal draws addressed by ``(seed, stream, counter)``.

    ``stream`` and ``counter`` broadcast against each other.  Counter ``c``
    uses the Box-Muller pair ``c // 2``: the cosine branch for even ``c``
    and the sine branch for odd ``c``.
    """
    stream, counter = np.broadcast_arrays(
        np.asarray(stream, dtype=np.uint64), np.asarray(counter, dtype=np.uint64)
    )
    return keyed_normals(stream_key(seed, stream), counter)


def keyed_normals(key, counter) -> np.ndarray:
    """:func:`normals` with precomputed stream keys (see :func:`stream_key`)."""
    key, counter = np.broadcast_arrays(
        np.asarray(key, dtype=np.uint64), np.asarray(counter, dtype=np.uint64)
    )
    pair = counter >> np.uint64(1)
    u1 = uniforms(key, pair * np.uint64(2))
    u2 = uniforms(key, pair * np.uint64(2) + np.uint64(1))
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    odd = (counter & np.uint64(1)).astype(bool)
    return np.where(odd, r * np.sin(theta), r * np.cos(theta))
