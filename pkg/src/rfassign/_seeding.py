"""64-bit seed mixing shared by the Python side and the numba kernels."""

import numba as nb
import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(x: int) -> int:
    """splitmix64 finalizer on a Python int."""
    z = (x + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *keys: int | str) -> int:
    """Fold integer or string keys into ``master``; order matters."""
    s = master & MASK64
    for k in keys:
        if isinstance(k, str):
            k = int.from_bytes(k.encode(), "little") & MASK64
        s = mix64(s ^ mix64(k & MASK64))
    return s


def tree_seed(master: int, k: int) -> int:
    """Seed of tree ``k``: master XOR hash(k)."""
    return (master & MASK64) ^ mix64(k)


@nb.njit(cache=True, nogil=True)
def mix_u64(z):
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True, nogil=True)
def next_u64(state):
    out = mix_u64(state[0])
    state[0] += np.uint64(0x9E3779B97F4A7C15)
    return out


@nb.njit(cache=True, nogil=True)
def next_uniform(state):
    return np.float64(next_u64(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@nb.njit(cache=True, nogil=True)
def rand_below(state, m):
    k = np.int64(next_uniform(state) * m)
    return min(k, m - 1)


@nb.njit(cache=True, nogil=True)
def hash_uniform(seed, a, b, c):
    """Uniform in [0, 1) from a counter tuple; no state carried between calls."""
    z = mix_u64(seed ^ mix_u64(np.uint64(a)))
    z = mix_u64(z ^ mix_u64(np.uint64(b) + np.uint64(0x632BE59BD9B4E019)))
    z = mix_u64(z ^ mix_u64(np.uint64(c) + np.uint64(0x8CB92BA72F3D8DD7)))
    return np.float64(z >> np.uint64(11)) * (1.0 / 9007199254740992.0)
