"""Dense array core.

A "tensor" here is simply a C-contiguous ``float64`` :class:`numpy.ndarray`
of rank 1-4.  This module adds the shape validation, finiteness checks and
fixed-order arithmetic the rest of the package relies on; the loops
themselves live in :mod:`deep_galaxy._kernels`.
"""

import numpy as np

from . import _kernels
from .errors import InvalidShapeError, NonFiniteError

MAX_RANK = 4


def as_tensor(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def check_shape(shape):
    shape = tuple(int(e) for e in shape)
    if not 1 <= len(shape) <= MAX_RANK:
        raise InvalidShapeError(f"rank must be 1..{MAX_RANK}, got shape {shape}")
    if any(e < 1 for e in shape):
        raise InvalidShapeError(f"all extents must be >= 1, got shape {shape}")
    return shape


def check_finite(x, what="tensor"):
    if not np.isfinite(x).all():
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return x


def tensor_new(shape, fill=0.0):
    return np.full(check_shape(shape), float(fill))


def output_extent(n, k, s, p):
    """Number of kernel positions along an axis of length ``n``."""
    return (n + 2 * p - k) // s + 1


def _check_conv_geometry(h, w, k, s, p):
    if k < 1 or s < 1 or p < 0:
        raise InvalidShapeError(f"need k >= 1, s >= 1, p >= 0 (got k={k}, s={s}, p={p})")
    ho, wo = output_extent(h, k, s, p), output_extent(w, k, s, p)
    if ho < 1 or wo < 1 or h + 2 * p < k or w + 2 * p < k:
        raise InvalidShapeError(
            f"kernel {k} (stride {s}, padding {p}) does not fit a {h}x{w} input"
        )
    return ho, wo


def matmul(a, b):
    """``c[i, j] = sum_t a[i, t] * b[t, j]``, summed for t = 0..k-1 in order."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise InvalidShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return check_finite(_kernels.matmul(a, b), "matmul result")


def im2col(x, k, s=1, p=0):
    """Lower a C x H x W image to a (C*k*k) x (H_out*W_out) patch matrix.

    Row ``(c*k + ki)*k + kj`` holds input channel ``c`` at kernel offset
    ``(ki, kj)``; column ``oi*W_out + oj`` is output position ``(oi, oj)``.
    Positions in the zero padding read 0.
    """
    x = as_tensor(x)
    if x.ndim != 3:
        raise InvalidShapeError(f"im2col expects a rank-3 (C,H,W) tensor, got {x.shape}")
    return im2col_batch(x[None], k, s, p)


def im2col_batch(x, k, s=1, p=0):
    """Batched im2col: N x C x H x W -> (C*k*k) x (N*H_out*W_out), sample-major columns."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise InvalidShapeError(f"expected a rank-4 (N,C,H,W) tensor, got {x.shape}")
    _check_conv_geometry(x.shape[2], x.shape[3], k, s, p)
    return _kernels.im2col(x, int(k), int(s), int(p))


def col2im(cols, c, h, w, k, s=1, p=0):
    """Adjoint of :func:`im2col`: scatter-add columns back onto a C x H x W image."""
    return col2im_batch(cols, 1, c, h, w, k, s, p)[0]


def col2im_batch(cols, n, c, h, w, k, s=1, p=0):
    cols = as_tensor(cols)
    ho, wo = _check_conv_geometry(h, w, k, s, p)
    expected = (c * k * k, n * ho * wo)
    if cols.shape != expected:
        raise InvalidShapeError(f"column matrix has shape {cols.shape}, expected {expected}")
    return _kernels.col2im(cols, int(n), int(c), int(h), int(w), int(k), int(s), int(p))


def transpose(a):
    """Contiguous copy of the transpose of a rank-2 tensor."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise InvalidShapeError(f"transpose expects rank 2, got {a.shape}")
    return _kernels.transpose(a)


def row_sums(a):
    """Per-row sums with a fixed left-to-right order."""
    return _kernels.rowsum(as_tensor(a))


def axpy(y, x, alpha):
    """Elementwise ``y + alpha * x``."""
    y, x = as_tensor(y), as_tensor(x)
    if y.shape != x.shape:
        raise InvalidShapeError(f"axpy shape mismatch: {y.shape} vs {x.shape}")
    return check_finite(y + float(alpha) * x, "axpy result")
