"""Counter-based Gaussian draws.

Every normal variate is a pure function of ``(seed, sample, n, j, stream)``,
so results never depend on iteration order, chunking or worker count.  The
generator is Philox4x64-10 with an explicit counter layout.  Bulk draws go
through ``numpy.random.Philox`` (one sequential run per sample); the
vectorised :func:`philox4x64` is an independent implementation of the same
block function, used to check the fast path bit for bit.
"""

import numpy as np

__all__ = ["philox4x64", "raw_blocks", "uniforms", "standard_normals"]

_M0 = 0xD2E7470EE14C6C93
_M1 = 0xCA5A826395121157
_W0 = 0x9E3779B97F4A7C15
_W1 = 0xBB67AE8584CAA73B
_MASK64 = (1 << 64) - 1
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)

# second key word; keeps our keys disjoint from plain integer seeds
_KEY_TAG = 0x5D1E_1AB0


def _mulhilo(a, b):
    """High and low 64-bit words of the 128-bit product ``a * b``."""
    a_lo, a_hi = np.uint64(a & 0xFFFFFFFF), np.uint64(a >> 32)
    b_lo, b_hi = b & _LO32, b >> _S32
    ll = a_lo * b_lo
    lh = a_lo * b_hi
    hl = a_hi * b_lo
    hh = a_hi * b_hi
    mid = (ll >> _S32) + (lh & _LO32) + (hl & _LO32)
    hi = hh + (lh >> _S32) + (hl >> _S32) + (mid >> _S32)
    with np.errstate(over="ignore"):  # the low word wraps by design
        lo = np.uint64(a) * b
    return hi, lo


def philox4x64(counter, key, rounds=10):
    """Philox4x64 block function.

    Parameters
    ----------
    counter : array_like of uint64, shape (..., 4)
    key : pair of ints

    Returns
    -------
    ndarray of uint64, shape (..., 4)
    """
    x = np.asarray(counter, dtype=np.uint64)
    x0, x1, x2, x3 = (x[..., i].copy() for i in range(4))
    k0, k1 = int(key[0]) & _MASK64, int(key[1]) & _MASK64
    for _ in range(rounds):
        hi0, lo0 = _mulhilo(_M0, x0)
        hi1, lo1 = _mulhilo(_M1, x2)
        x0 = hi1 ^ x1 ^ np.uint64(k0)
        x1 = lo1
        x2 = hi0 ^ x3 ^ np.uint64(k1)
        x3 = lo0
        k0 = (k0 + _W0) & _MASK64
        k1 = (k1 + _W1) & _MASK64
    return np.stack([x0, x1, x2, x3], axis=-1)


def _counter_words(seed, sample, n, blocks, stream):
    """Counters ``[n * blocks + b + 1, 0, sample, stream]`` for the vectorised path."""
    sample = np.asarray(sample, dtype=np.uint64)
    n = np.asarray(n, dtype=np.uint64)
    b = np.arange(blocks, dtype=np.uint64)
    c = np.zeros((sample.size, n.size, blocks, 4), dtype=np.uint64)
    c[..., 0] = (n[:, None] * np.uint64(blocks) + b[None, :] + np.uint64(1))[None]
    c[..., 2] = sample[:, None, None]
    c[..., 3] = np.uint64(stream)
    return c


def raw_blocks(seed, sample, n, blocks, stream=0, reference=False):
    """Philox output words, shape ``(len(sample), len(n), 4 * blocks)``.

    Block ``b`` of step ``n`` uses counter ``[n * blocks + b + 1, 0, sample,
    stream]`` and key ``(seed, tag)``.  Runs of consecutive ``n`` are drawn
    with ``numpy.random.Philox`` (which increments the counter before each
    block); ``reference=True`` evaluates every block with :func:`philox4x64`.
    """
    sample = np.atleast_1d(np.asarray(sample, dtype=np.int64))
    n = np.atleast_1d(np.asarray(n, dtype=np.int64))
    if reference:
        raw = philox4x64(_counter_words(seed, sample, n, blocks, stream), (seed, _KEY_TAG))
        return raw.reshape(sample.size, n.size, 4 * blocks)
    key = np.array([int(seed) & _MASK64, _KEY_TAG], dtype=np.uint64)
    out = np.empty((sample.size, n.size, 4 * blocks), dtype=np.uint64)
    runs = np.split(np.arange(n.size), np.nonzero(np.diff(n) != 1)[0] + 1)
    for s, sid in enumerate(sample):
        for run in runs:
            ctr = np.array([int(n[run[0]]) * blocks, 0, int(sid), int(stream)], dtype=np.uint64)
            bg = np.random.Philox(counter=ctr, key=key)
            out[s, run] = bg.random_raw(run.size * 4 * blocks).reshape(run.size, 4 * blocks)
    return out


def uniforms(seed, sample, n, width, stream=0):
    """Uniform(0, 1) draws of shape ``(len(sample), len(n), width)``.

    Draw ``[s, t, j]`` is determined by ``(seed, sample[s], n[t], j, width,
    stream)``; the row width fixes the counter layout.
    """
    blocks = -(-width // 4)
    raw = raw_blocks(seed, sample, n, blocks, stream)[..., :width]
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def standard_normals(seed, sample, n, width, stream=0):
    """Standard normal draws of shape ``(len(sample), len(n), width)``.

    Box-Muller on the lane pairs (0, 1) and (2, 3) of each Philox block.
    """
    w4 = 4 * (-(-width // 4))
    u = uniforms(seed, sample, n, w4, stream)
    u1, u2 = u[..., 0::2], u[..., 1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty_like(u)
    z[..., 0::2] = r * np.cos(2.0 * np.pi * u2)
    z[..., 1::2] = r * np.sin(2.0 * np.pi * u2)
    return z[..., :width]
