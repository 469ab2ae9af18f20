"""Counter-based random numbers for reproducible parallel Monte Carlo.

The generator is the 4x32 counter block cipher with 10 rounds, keyed by a
64-bit seed split into two 32-bit words. Every draw is addressed absolutely
by (seed, path, step, block), so any subset of paths can be simulated in any
order, on any number of workers, and produce bit-identical streams. A block
of four 32-bit words yields two double-precision uniforms (53 effective bits
each), which Box-Muller turns into two standard normals.
"""

from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)

# fixed tag in the fourth counter word, so other consumers of the same seed
# can claim disjoint streams by picking a different tag
_STREAM_TAG = np.uint32(0x5DE1AB01)

_TWO_PI = 2.0 * np.pi
_INV_2_53 = 1.0 / 9007199254740992.0  # 2^-53


def _philox_words(c0, c1, c2, c3, k0, k1):
    """The 10-round block as four uint64 arrays with values below 2^32.

    Lanes are carried as uint64 throughout, which avoids per-round dtype
    conversions, and the rounds run in preallocated buffers once every
    lane has reached full shape. Bitwise identical (mod dtype) to
    philox4x32_reference.
    """
    x0 = np.asarray(c0, dtype=np.uint64)
    x1 = np.asarray(c1, dtype=np.uint64)
    x2 = np.asarray(c2, dtype=np.uint64)
    x3 = np.asarray(c3, dtype=np.uint64)
    key0 = int(k0)
    key1 = int(k1)
    shift = np.uint64(32)
    buffers = None
    for rnd in range(10):
        # After round 0 every lane is a freshly allocated temporary, so
        # once all four reach a common non-scalar shape the remaining
        # rounds can run in place without touching caller memory.
        if (buffers is None and rnd > 0 and x0.shape != ()
                and x0.shape == x1.shape == x2.shape == x3.shape):
            buffers = (np.empty_like(x0), np.empty_like(x0))
        if buffers is None:
            p0 = x0 * _M0
            p1 = x2 * _M1
            y0 = (p1 >> shift) ^ x1 ^ np.uint64(key0)
            y1 = p1 & _MASK32
            y2 = (p0 >> shift) ^ x3 ^ np.uint64(key1)
            y3 = p0 & _MASK32
            x0, x1, x2, x3 = y0, y1, y2, y3
        else:
            p0, p1 = buffers
            np.multiply(x0, _M0, out=p0)
            np.multiply(x2, _M1, out=p1)
            y0 = np.right_shift(p1, shift, out=x2)
            np.bitwise_xor(y0, x1, out=y0)
            np.bitwise_xor(y0, np.uint64(key0), out=y0)
            np.bitwise_and(p1, _MASK32, out=x1)
            y2 = np.right_shift(p0, shift, out=x0)
            np.bitwise_xor(y2, x3, out=y2)
            np.bitwise_xor(y2, np.uint64(key1), out=y2)
            np.bitwise_and(p0, _MASK32, out=x3)
            x0, x2 = y0, y2
            buffers = (p0, p1)
        key0 = (key0 + 0x9E3779B9) & 0xFFFFFFFF
        key1 = (key1 + 0xBB67AE85) & 0xFFFFFFFF
    return x0, x1, x2, x3


def philox4x32(c0, c1, c2, c3, k0, k1):
    """One 10-round block per lane. Inputs are integer arrays or scalars
    (broadcastable to a common shape); returns four uint32 arrays."""
    x0, x1, x2, x3 = _philox_words(c0, c1, c2, c3, k0, k1)
    shape = np.broadcast_shapes(x0.shape, x1.shape, x2.shape, x3.shape)
    return tuple(
        np.broadcast_to(w, shape).astype(np.uint32)
        for w in (x0, x1, x2, x3)
    )


def philox4x32_reference(counter, key):
    """Independent scalar reference, plain Python integers only. Used to
    cross-check the vectorized implementation."""
    x = [c & 0xFFFFFFFF for c in counter]
    k0, k1 = key[0] & 0xFFFFFFFF, key[1] & 0xFFFFFFFF
    for _ in range(10):
        p0 = (0xD2511F53 * x[0]) & 0xFFFFFFFFFFFFFFFF
        p1 = (0xCD9E8D57 * x[2]) & 0xFFFFFFFFFFFFFFFF
        y0 = ((p1 >> 32) ^ x[1] ^ k0) & 0xFFFFFFFF
        y1 = p1 & 0xFFFFFFFF
        y2 = ((p0 >> 32) ^ x[3] ^ k1) & 0xFFFFFFFF
        y3 = p0 & 0xFFFFFFFF
        x = [y0, y1, y2, y3]
        k0 = (k0 + 0x9E3779B9) & 0xFFFFFFFF
        k1 = (k1 + 0xBB67AE85) & 0xFFFFFFFF
    return tuple(x)


def _split_seed(seed):
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return np.uint32(seed & 0xFFFFFFFF), np.uint32(seed >> 32)


def _uniforms_from_words(w_lo, w_hi):
    """Map two 32-bit words to one open-interval (0,1) double with 53 bits."""
    w_lo = np.asarray(w_lo, dtype=np.uint64)
    w_hi = np.asarray(w_hi, dtype=np.uint64)
    bits = (w_hi << np.uint64(32)) | w_lo
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * _INV_2_53


def normals(seed, paths, step, count):
    """Standard normal draws addressed by (seed, path, step).

    paths is an integer array of path indices (shape (n,)); step a
    nonnegative integer; count the number of normals per path. Returns an
    (n, count) float array, bit-reproducible for fixed arguments.
    """
    paths = np.asarray(paths, dtype=np.uint32)
    n = paths.shape[0]
    k0, k1 = _split_seed(seed)
    blocks = (count + 1) // 2
    out = np.empty((n, 2 * blocks))
    c0 = np.uint32(step & 0xFFFFFFFF)
    for b in range(blocks):
        w0, w1, w2, w3 = _philox_words(c0, paths, np.uint32(b), _STREAM_TAG, k0, k1)
        u1 = _uniforms_from_words(w0, w1)
        u2 = _uniforms_from_words(w2, w3)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = _TWO_PI * u2
        out[:, 2 * b] = r * np.cos(theta)
        out[:, 2 * b + 1] = r * np.sin(theta)
    return out[:, :count]


def normals_steps(seed, paths, step0, n_steps, count):
    """Normals for a contiguous run of steps, shape (n_steps, n, count).

    Row k is bit-identical to normals(seed, paths, step0 + k, count); the
    whole span is produced by one batched cipher call per block index.
    """
    paths = np.asarray(paths, dtype=np.uint32)
    n = paths.shape[0]
    k0, k1 = _split_seed(seed)
    blocks = (count + 1) // 2
    out = np.empty((n_steps, n, 2 * blocks))
    steps = ((np.uint64(step0) + np.arange(n_steps, dtype=np.uint64))
             & _MASK32).astype(np.uint32)[:, None]
    lanes = paths[None, :]
    for b in range(blocks):
        w0, w1, w2, w3 = _philox_words(steps, lanes, np.uint32(b), _STREAM_TAG, k0, k1)
        u1 = _uniforms_from_words(w0, w1)
        u2 = _uniforms_from_words(w2, w3)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = _TWO_PI * u2
        out[:, :, 2 * b] = r * np.cos(theta)
        out[:, :, 2 * b + 1] = r * np.sin(theta)
    return out[:, :, :count]


def uniforms(seed, paths, step, count, tag=np.uint32(0x5DE1AB02)):
    """Open-interval (0,1) uniforms addressed like normals() but on a
    disjoint stream (different counter tag)."""
    paths = np.asarray(paths, dtype=np.uint32)
    n = paths.shape[0]
    k0, k1 = _split_seed(seed)
    blocks = (count + 1) // 2
    out = np.empty((n, 2 * blocks))
    c0 = np.uint32(step & 0xFFFFFFFF)
    for b in range(blocks):
        w0, w1, w2, w3 = _philox_words(c0, paths, np.uint32(b), tag, k0, k1)
        out[:, 2 * b] = _uniforms_from_words(w0, w1)
        out[:, 2 * b + 1] = _uniforms_from_words(w2, w3)
    return out[:, :count]
