"""Counter-based per-sample random numbers.

Each (seed, image, pixel, sample) tuple hashes to its own key, so the value of
every random draw is independent of how pixels are scheduled across threads.
"""

from __future__ import annotations

import numba as nb

_JIT = dict(cache=True, error_model="numpy")
_M32 = 0xFFFFFFFF


@nb.njit(inline="always", **_JIT)
def hash32(x):
    """lowbias32 integer hash on the low 32 bits."""
    x &= _M32
    x ^= x >> 16
    x = (x * 0x7FEB352D) & _M32
    x ^= x >> 15
    x = (x * 0x846CA68B) & _M32
    x ^= x >> 16
    return x


@nb.njit(inline="always", **_JIT)
def sample_key(seed, image, px, py, sample):
    k = hash32(seed)
    k = hash32(k ^ hash32(image))
    k = hash32(k ^ hash32(px + 0x632BE5AB))
    k = hash32(k ^ hash32(py + 0x85157AF5))
    return hash32(k ^ hash32(sample + 0x3C6EF372))


@nb.njit(inline="always", **_JIT)
def uniform(key, counter):
    """Uniform float in [0, 1) for draw number ``counter`` of a sample."""
    return hash32(key ^ hash32(counter * 0x9E3779B9 + 0x7F4A7C15)) * (1.0 / 4294967296.0)
