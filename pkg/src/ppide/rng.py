"""Counter-based random numbers keyed by (seed, path, step, stream).

Every draw is a pure function of its key, so a path's noise does not depend on
how many other paths are simulated alongside it or on how the work is split
across threads. The block cipher is Philox4x32 with ten rounds; the hot path
runs as a compiled kernel and a pure numpy version is kept as a reference.
"""

from __future__ import annotations

import enum

import numba
import numpy as np
from scipy.special import ndtri

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)


class Stream(enum.IntEnum):
    """Stream tags separating the independent noise sources of a simulation."""

    BROWNIAN = 1
    JUMP_COUNT = 2
    JUMP_TIME = 3
    JUMP_MARK = 4


def philox4x32(counter: np.ndarray, key: tuple[int, int]) -> np.ndarray:
    """Apply Philox4x32-10 to an array of 128-bit counters.

    Args:
        counter: Array of shape ``(n, 4)`` holding 32-bit words.
        key: Two 32-bit key words.

    Returns:
        Array of shape ``(n, 4)`` of ``uint32`` output words.
    """
    c = np.asarray(counter, dtype=np.uint64) & _MASK
    c0, c1, c2, c3 = (c[:, i].copy() for i in range(4))
    k0 = np.uint64(key[0]) & _MASK
    k1 = np.uint64(key[1]) & _MASK
    for rnd in range(10):
        if rnd:
            k0 = (k0 + _W0) & _MASK
            k1 = (k1 + _W1) & _MASK
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> _SHIFT, p0 & _MASK
        hi1, lo1 = p1 >> _SHIFT, p1 & _MASK
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return np.stack([c0, c1, c2, c3], axis=1).astype(np.uint32)


def _key(seed: int) -> tuple[int, int]:
    seed = int(seed)
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF


@numba.njit(cache=True)
def _uniform_kernel(paths, step, stream, n, k0, k1):  # pragma: no cover - compiled
    m = paths.shape[0]
    blocks = (n + 1) // 2
    out = np.empty((m, blocks * 2))
    mask = np.uint64(0xFFFFFFFF)
    for i in range(m):
        p = np.uint64(paths[i])
        for blk in range(blocks):
            c0 = p & mask
            c1 = np.uint64(step) & mask
            c2 = np.uint64(blk) | ((p >> np.uint64(32)) << np.uint64(20))
            c3 = np.uint64(stream) & mask
            a0 = np.uint64(k0)
            a1 = np.uint64(k1)
            for rnd in range(10):
                if rnd > 0:
                    a0 = (a0 + np.uint64(0x9E3779B9)) & mask
                    a1 = (a1 + np.uint64(0xBB67AE85)) & mask
                p0 = np.uint64(0xD2511F53) * c0
                p1 = np.uint64(0xCD9E8D57) * c2
                n0 = (p1 >> np.uint64(32)) ^ c1 ^ a0
                n2 = (p0 >> np.uint64(32)) ^ c3 ^ a1
                c0, c1, c2, c3 = n0, p1 & mask, n2, p0 & mask
            out[i, 2 * blk] = ((c0 >> np.uint64(5)) * 67108864.0 + (c1 >> np.uint64(6)) + 0.5) / 9007199254740992.0
            out[i, 2 * blk + 1] = ((c2 >> np.uint64(5)) * 67108864.0 + (c3 >> np.uint64(6)) + 0.5) / 9007199254740992.0
    return out


def uniforms(seed: int, stream: int, paths: np.ndarray, step: int, n: int) -> np.ndarray:
    """Uniform draws in the open interval (0, 1) with 53-bit resolution.

    Args:
        seed: Experiment seed.
        stream: Stream tag, typically a :class:`Stream` member.
        paths: Integer path indices, shape ``(m,)``.
        step: Time-step index.
        n: Number of draws per path.

    Returns:
        Array of shape ``(m, n)``; entry ``[i, j]`` depends only on
        ``(seed, stream, paths[i], step, j)``. Draws ``2b`` and ``2b+1`` come
        from the Philox block with counter ``(path, step, b, stream)``.
    """
    k0, k1 = _key(seed)
    paths = np.ascontiguousarray(paths, dtype=np.int64)
    return _uniform_kernel(paths, int(step), int(stream), int(n), k0, k1)[:, :n]


def uniforms_reference(seed: int, stream: int, paths: np.ndarray, step: int, n: int) -> np.ndarray:
    """Pure numpy version of :func:`uniforms` built on :func:`philox4x32`."""
    paths = np.asarray(paths, dtype=np.uint64)
    m = paths.shape[0]
    blocks = (n + 1) // 2
    ctr = np.empty((m * blocks, 4), dtype=np.uint64)
    ctr[:, 0] = np.repeat(paths & _MASK, blocks)
    ctr[:, 1] = np.uint64(step) & _MASK
    ctr[:, 2] = np.tile(np.arange(blocks, dtype=np.uint64), m) | (np.repeat(paths >> _SHIFT, blocks) << np.uint64(20))
    ctr[:, 3] = np.uint64(stream) & _MASK
    words = philox4x32(ctr, _key(seed)).astype(np.uint64)
    a = words[:, 0::2] >> np.uint64(5)
    b = words[:, 1::2] >> np.uint64(6)
    u = (a.astype(np.float64) * 67108864.0 + b.astype(np.float64) + 0.5) / 9007199254740992.0
    return u.reshape(m, blocks * 2)[:, :n]


def normals(seed: int, stream: int, paths: np.ndarray, step: int, n: int) -> np.ndarray:
    """Standard normal draws by inverse transform of :func:`uniforms`."""
    return ndtri(uniforms(seed, stream, paths, step, n))


def poisson(u: np.ndarray, mean: float | np.ndarray) -> np.ndarray:
    """Poisson variates by inverse transform, monotone in ``u``.

    Monotonicity makes counts from the same uniforms comparable across
    intensities, which keeps coefficient perturbation studies coupled.
    """
    u = np.asarray(u, dtype=float)
    mean = np.broadcast_to(np.asarray(mean, dtype=float), u.shape)
    k = np.zeros(u.shape, dtype=np.int64)
    pmf = np.exp(-mean)
    cdf = pmf.copy()
    active = u > cdf
    j = 0
    while active.any():
        j += 1
        pmf = pmf * mean / j
        cdf = cdf + pmf
        k[active] = j
        active &= u > cdf
        if j > 1000:
            raise FloatingPointError("Poisson inversion did not terminate")
    return k
