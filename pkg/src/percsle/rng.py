"""Counter-based pseudo-random streams for reproducible parallel sampling.

Every Monte-Carlo consumer in this package draws from an xoshiro256++
generator whose state is derived, via SplitMix64, from a 64-bit user seed
and a stream index.  Stream indices are assigned to *work chunks* (one
chunk = one contiguous batch of samples), never to threads, so a run is
bit-identical for a fixed (seed, chunk_size) no matter how many workers
execute the chunks.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True, nogil=True)
def _splitmix64(state):
    """Advance a SplitMix64 state; returns (new_state, output)."""
    state = state + _GOLDEN
    z = state
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    z = z ^ (z >> np.uint64(31))
    return state, z


@njit(cache=True, nogil=True)
def stream_state(seed, stream):
    """Initial xoshiro256++ state for (seed, stream index)."""
    s = np.empty(4, dtype=np.uint64)
    x = np.uint64(seed) + np.uint64(stream) * _GOLDEN
    for i in range(4):
        x, z = _splitmix64(x)
        s[i] = z
    if s[0] | s[1] | s[2] | s[3] == np.uint64(0):
        s[0] = _GOLDEN
    return s


@njit(cache=True, nogil=True)
def _rotl(x, k):
    return (x << k) | (x >> (np.uint64(64) - k))


@njit(cache=True, nogil=True)
def next_u64(s):
    """One xoshiro256++ output; mutates the 4-word state in place."""
    result = _rotl(s[0] + s[3], np.uint64(23)) + s[0]
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], np.uint64(45))
    return result


@njit(cache=True, nogil=True)
def next_uniform(s):
    """Uniform double in [0, 1) with 53-bit resolution."""
    return (next_u64(s) >> np.uint64(11)) * 1.1102230246251565e-16


@njit(cache=True, nogil=True)
def fill_uniform(s, out):
    for i in range(out.shape[0]):
        out[i] = next_uniform(s)


@njit(cache=True, nogil=True)
def next_normal_pair(s):
    """Box-Muller pair; u1 shifted off zero so log() is safe."""
    u1 = (np.float64(next_u64(s) >> np.uint64(11)) + 0.5) * 1.1102230246251565e-16
    u2 = next_uniform(s)
    r = np.sqrt(-2.0 * np.log(u1))
    a = 6.283185307179586 * u2
    return r * np.cos(a), r * np.sin(a)


@njit(cache=True, nogil=True)
def fill_normal(s, out):
    n = out.shape[0]
    i = 0
    while i + 1 < n:
        g1, g2 = next_normal_pair(s)
        out[i] = g1
        out[i + 1] = g2
        i += 2
    if i < n:
        g1, g2 = next_normal_pair(s)
        out[i] = g1


class Stream:
    """Python-side handle on one (seed, stream) generator."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self.state = stream_state(np.uint64(seed), np.uint64(stream))

    def uniforms(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.float64)
        fill_uniform(self.state, out)
        return out

    def normals(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.float64)
        fill_normal(self.state, out)
        return out
