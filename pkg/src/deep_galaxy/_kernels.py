"""Hot numeric kernels, in two interchangeable flavours.

Every kernel exists as a numba ``@njit`` function (suffix ``_nb``) and a
pure-numpy function (suffix ``_np``).  Both produce bit-identical results:
each output element is accumulated in the same fixed order, so the choice
of backend, and the number of numba threads, never changes a result.

Backend selection happens once at import time:

    DEEP_GALAXY_NUMBA=0      force the numpy path
    DEEP_GALAXY_THREADS=N    numba thread count (results do not depend on it)

All kernels expect C-contiguous float64 input; the public wrappers in
``deep_galaxy.tensor`` take care of that.
"""

import os

import numpy as np

_FALSE = {"0", "false", "no", "off"}

try:
    import numba
    from numba import njit, prange
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
else:
    if "NUMBA_THREADING_LAYER" not in os.environ:
        # skips the noisy TBB version probe on hosts with an old libtbb
        numba.config.THREADING_LAYER = "omp"

USE_NUMBA = numba is not None and os.environ.get("DEEP_GALAXY_NUMBA", "1").strip().lower() not in _FALSE


def backend():
    return "numba" if USE_NUMBA else "numpy"


def configure_threads(value=None):
    """Apply DEEP_GALAXY_THREADS (or ``value``) to numba; returns threads in use.

    Requests above the numba pool size are clamped.  Only a performance
    hint: kernels partition work over independent output elements.
    """
    if value is None:
        value = os.environ.get("DEEP_GALAXY_THREADS")
    if numba is None:
        return 1
    if value:
        try:
            n = int(value)
        except ValueError:
            n = 0
        if n >= 1:
            numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    return numba.get_num_threads()


# --------------------------------------------------------------------------
# numpy reference path

def matmul_np(a, b):
    m, k = a.shape
    c = np.zeros((m, b.shape[1]))
    for t in range(k):
        c += np.multiply.outer(a[:, t], b[t])
    return c


def transpose_np(a):
    return np.ascontiguousarray(a.T)


def relu_forward_np(x):
    mask = x > 0
    return np.where(mask, x, 0.0), mask


def relu_backward_np(dy, mask):
    return np.where(mask, dy, 0.0)


def rowsum_np(a):
    # cumsum is strictly left-to-right, unlike np.sum (pairwise)
    if a.shape[1] == 0:
        return np.zeros(a.shape[0])
    return np.cumsum(a, axis=1)[:, -1].copy()


def im2col_np(x, k, s, p):
    n, c, h, w = x.shape
    ho = (h + 2 * p - k) // s + 1
    wo = (w + 2 * p - k) // s + 1
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    cols = np.empty((c, k, k, n, ho, wo))
    for ki in range(k):
        for kj in range(k):
            patch = xp[:, :, ki:ki + s * (ho - 1) + 1:s, kj:kj + s * (wo - 1) + 1:s]
            cols[:, ki, kj] = patch.transpose(1, 0, 2, 3)
    return cols.reshape(c * k * k, n * ho * wo)


def col2im_np(cols, n, c, h, w, k, s, p):
    ho = (h + 2 * p - k) // s + 1
    wo = (w + 2 * p - k) // s + 1
    view = cols.reshape(c, k, k, n, ho, wo)
    img = np.zeros((n, c, h + 2 * p, w + 2 * p))
    for ki in range(k):
        for kj in range(k):
            img[:, :, ki:ki + s * (ho - 1) + 1:s, kj:kj + s * (wo - 1) + 1:s] += (
                view[:, ki, kj].transpose(1, 0, 2, 3)
            )
    return np.ascontiguousarray(img[:, :, p:p + h, p:p + w])


def maxpool2_forward_np(x):
    n, c, h, w = x.shape
    win = (
        x.reshape(n, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h // 2, w // 2, 4)
    )
    idx = np.argmax(win, axis=-1)  # first occurrence on ties
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(y), idx.astype(np.int8)


def maxpool2_backward_np(dy, idx):
    n, c, ho, wo = dy.shape
    win = np.zeros((n, c, ho, wo, 4))
    np.put_along_axis(win, idx.astype(np.intp)[..., None], dy[..., None], axis=-1)
    return np.ascontiguousarray(
        win.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
    )


# --------------------------------------------------------------------------
# numba path

if numba is not None:

    # tile sizes: columns of b, summation index, rows of a
    _JB = 512
    _TB = 128
    _IB = 32

    @njit(cache=True)
    def _axpy_row(c, av, b):
        for j in range(c.shape[0]):
            c[j] += av * b[j]

    @njit(cache=True)
    def _axpy4_row(c, a0, a1, a2, a3, b0, b1, b2, b3):
        # four consecutive t steps per pass; same order as four _axpy_row calls
        for j in range(c.shape[0]):
            acc = c[j]
            acc += a0 * b0[j]
            acc += a1 * b1[j]
            acc += a2 * b2[j]
            acc += a3 * b3[j]
            c[j] = acc

    @njit(parallel=True, cache=True)
    def matmul_nb(a, b):
        m, k = a.shape
        n = b.shape[1]
        c = np.zeros((m, n))
        # Each (column block, row block) task owns its outputs.  Tiling t
        # keeps the streamed slab of b cache-resident while every c[i, j]
        # still accumulates t = 0..k-1 strictly in order.
        njb = (n + _JB - 1) // _JB
        nib = (m + _IB - 1) // _IB
        for task in prange(njb * nib):
            j0 = (task // nib) * _JB
            j1 = min(j0 + _JB, n)
            i0 = (task % nib) * _IB
            i1 = min(i0 + _IB, m)
            for t0 in range(0, k, _TB):
                t1 = min(t0 + _TB, k)
                for i in range(i0, i1):
                    crow = c[i, j0:j1]
                    t = t0
                    while t + 4 <= t1:
                        _axpy4_row(crow, a[i, t], a[i, t + 1], a[i, t + 2], a[i, t + 3],
                                   b[t, j0:j1], b[t + 1, j0:j1], b[t + 2, j0:j1], b[t + 3, j0:j1])
                        t += 4
                    while t < t1:
                        _axpy_row(crow, a[i, t], b[t, j0:j1])
                        t += 1
        return c

    @njit(parallel=True, cache=True)
    def transpose_nb(a):
        m, n = a.shape
        out = np.empty((n, m))
        for ib in prange((m + 31) // 32):
            i0 = ib * 32
            for j0 in range(0, n, 32):
                for i in range(i0, min(i0 + 32, m)):
                    for j in range(j0, min(j0 + 32, n)):
                        out[j, i] = a[i, j]
        return out

    @njit(cache=True)
    def relu_forward_nb(x):
        flat = x.ravel()
        y = np.empty(flat.size)
        mask = np.empty(flat.size, dtype=np.bool_)
        for i in range(flat.size):
            pos = flat[i] > 0.0
            mask[i] = pos
            y[i] = flat[i] if pos else 0.0
        return y.reshape(x.shape), mask.reshape(x.shape)

    @njit(cache=True)
    def relu_backward_nb(dy, mask):
        flat = dy.ravel()
        m = mask.ravel()
        dx = np.empty(flat.size)
        for i in range(flat.size):
            dx[i] = flat[i] if m[i] else 0.0
        return dx.reshape(dy.shape)

    @njit(cache=True)
    def rowsum_nb(a):
        m, k = a.shape
        out = np.zeros(m)
        for i in range(m):
            acc = 0.0
            for t in range(k):
                acc += a[i, t]
            out[i] = acc
        return out

    @njit(parallel=True, cache=True)
    def im2col_nb(x, k, s, p):
        n, c, h, w = x.shape
        ho = (h + 2 * p - k) // s + 1
        wo = (w + 2 * p - k) // s + 1
        npos = ho * wo
        cols = np.empty((c * k * k, n * npos))
        for r in prange(c * k * k):
            ch = r // (k * k)
            ki = (r // k) % k
            kj = r % k
            for b in range(n):
                base = b * npos
                for oi in range(ho):
                    ii = oi * s + ki - p
                    for oj in range(wo):
                        jj = oj * s + kj - p
                        if 0 <= ii < h and 0 <= jj < w:
                            cols[r, base + oi * wo + oj] = x[b, ch, ii, jj]
                        else:
                            cols[r, base + oi * wo + oj] = 0.0
        return cols

    @njit(parallel=True, cache=True)
    def col2im_nb(cols, n, c, h, w, k, s, p):
        ho = (h + 2 * p - k) // s + 1
        wo = (w + 2 * p - k) // s + 1
        npos = ho * wo
        img = np.zeros((n, c, h, w))
        # (sample, channel) planes are disjoint; within a plane rows r are
        # visited in increasing order, matching the numpy path.
        for plane in prange(n * c):
            b = plane // c
            ch = plane % c
            for ki in range(k):
                for kj in range(k):
                    r = (ch * k + ki) * k + kj
                    for oi in range(ho):
                        ii = oi * s + ki - p
                        if ii < 0 or ii >= h:
                            continue
                        for oj in range(wo):
                            jj = oj * s + kj - p
                            if 0 <= jj < w:
                                img[b, ch, ii, jj] += cols[r, b * npos + oi * wo + oj]
        return img

    @njit(parallel=True, cache=True)
    def maxpool2_forward_nb(x):
        n, c, h, w = x.shape
        ho = h // 2
        wo = w // 2
        y = np.empty((n, c, ho, wo))
        idx = np.empty((n, c, ho, wo), dtype=np.int8)
        for plane in prange(n * c):
            b = plane // c
            ch = plane % c
            for i in range(ho):
                for j in range(wo):
                    best = x[b, ch, 2 * i, 2 * j]
                    arg = 0
                    for q in range(1, 4):
                        v = x[b, ch, 2 * i + q // 2, 2 * j + q % 2]
                        if v > best:
                            best = v
                            arg = q
                    y[b, ch, i, j] = best
                    idx[b, ch, i, j] = arg
        return y, idx

    @njit(parallel=True, cache=True)
    def maxpool2_backward_nb(dy, idx):
        n, c, ho, wo = dy.shape
        dx = np.zeros((n, c, 2 * ho, 2 * wo))
        for plane in prange(n * c):
            b = plane // c
            ch = plane % c
            for i in range(ho):
                for j in range(wo):
                    q = idx[b, ch, i, j]
                    dx[b, ch, 2 * i + q // 2, 2 * j + q % 2] = dy[b, ch, i, j]
        return dx

    configure_threads()

else:  # pragma: no cover
    matmul_nb = rowsum_nb = im2col_nb = col2im_nb = transpose_nb = None
    relu_forward_nb = relu_backward_nb = None
    maxpool2_forward_nb = maxpool2_backward_nb = None


if USE_NUMBA:
    matmul = matmul_nb
    transpose = transpose_nb
    relu_forward = relu_forward_nb
    relu_backward = relu_backward_nb
    rowsum = rowsum_nb
    im2col = im2col_nb
    col2im = col2im_nb
    maxpool2_forward = maxpool2_forward_nb
    maxpool2_backward = maxpool2_backward_nb
else:
    matmul = matmul_np
    transpose = transpose_np
    relu_forward = relu_forward_np
    relu_backward = relu_backward_np
    rowsum = rowsum_np
    im2col = im2col_np
    col2im = col2im_np
    maxpool2_forward = maxpool2_forward_np
    maxpool2_backward = maxpool2_backward_np
