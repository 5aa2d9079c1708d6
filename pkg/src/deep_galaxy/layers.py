"""Layer math: convolution, ReLU, 2x2 max-pool, dense, softmax + cross-entropy.

Each layer is a pair of pure functions.  ``*_forward`` returns the output
and a cache; the matching ``*_backward`` consumes that cache and returns
gradients.  Parameters are never mutated here.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import InvalidShapeError
from .tensor import (
    as_tensor,
    check_shape,
    col2im_batch,
    im2col_batch,
    matmul,
    output_extent,
    row_sums,
    transpose,
)


@dataclass
class ConvParams:
    weights: np.ndarray  # F x C x K x K
    bias: np.ndarray  # F
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        self.weights = as_tensor(self.weights)
        self.bias = as_tensor(self.bias)
        w = self.weights
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise InvalidShapeError(f"conv weights must be F x C x K x K, got {w.shape}")
        if self.bias.shape != (w.shape[0],):
            raise InvalidShapeError(f"conv bias {self.bias.shape} does not match {w.shape[0]} filters")
        if self.stride < 1 or self.padding < 0:
            raise InvalidShapeError("stride must be >= 1 and padding >= 0")

    @property
    def filters(self):
        return self.weights.shape[0]

    @property
    def kernel(self):
        return self.weights.shape[2]


@dataclass
class DenseParams:
    weights: np.ndarray  # out x in
    bias: np.ndarray  # out

    def __post_init__(self):
        self.weights = as_tensor(self.weights)
        self.bias = as_tensor(self.bias)
        if self.weights.ndim != 2:
            raise InvalidShapeError(f"dense weights must be rank 2, got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise InvalidShapeError(
                f"dense bias {self.bias.shape} does not match {self.weights.shape[0]} outputs"
            )


@dataclass
class ConvCache:
    cols: np.ndarray
    x_shape: tuple


@dataclass
class DenseCache:
    x: np.ndarray


@dataclass
class ReluCache:
    mask: np.ndarray


@dataclass
class PoolCache:
    argmax: np.ndarray
    x_shape: tuple


# --------------------------------------------------------------------------
# convolution

def conv_forward(x, p):
    """Cross-correlate a N x C x H x W batch with ``p.weights`` (no kernel flip)."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise InvalidShapeError(f"conv input must be N x C x H x W, got {x.shape}")
    f, c, k, _ = p.weights.shape
    if x.shape[1] != c:
        raise InvalidShapeError(f"input has {x.shape[1]} channels, filters expect {c}")
    n, _, h, w = x.shape
    ho = output_extent(h, k, p.stride, p.padding)
    wo = output_extent(w, k, p.stride, p.padding)
    cols = im2col_batch(x, k, p.stride, p.padding)
    out = matmul(p.weights.reshape(f, c * k * k), cols)
    out += p.bias[:, None]
    y = np.ascontiguousarray(out.reshape(f, n, ho, wo).transpose(1, 0, 2, 3))
    return y, ConvCache(cols, x.shape)


def conv_backward(dy, cache, p, need_dx=True):
    """Gradients of ``sum(dy * y)`` w.r.t. input, weights and bias.

    ``need_dx=False`` skips the input gradient (first layer of a network).
    """
    dy = as_tensor(dy)
    n, c, h, w = cache.x_shape
    f, _, k, _ = p.weights.shape
    ho = output_extent(h, k, p.stride, p.padding)
    wo = output_extent(w, k, p.stride, p.padding)
    if dy.shape != (n, f, ho, wo):
        raise InvalidShapeError(f"dy has shape {dy.shape}, forward produced {(n, f, ho, wo)}")
    dyr = np.ascontiguousarray(dy.transpose(1, 0, 2, 3).reshape(f, n * ho * wo))
    db = row_sums(dyr)
    dw = matmul(dyr, transpose(cache.cols)).reshape(p.weights.shape)
    dx = None
    if need_dx:
        wt = transpose(p.weights.reshape(f, c * k * k))
        dx = col2im_batch(matmul(wt, dyr), n, c, h, w, k, p.stride, p.padding)
    return dx, dw, db


# --------------------------------------------------------------------------
# relu

def relu_forward(x):
    y, mask = _kernels.relu_forward(as_tensor(x))
    return y, ReluCache(mask)


def relu_backward(dy, cache):
    dy = as_tensor(dy)
    if dy.shape != cache.mask.shape:
        raise InvalidShapeError(f"dy has shape {dy.shape}, expected {cache.mask.shape}")
    return _kernels.relu_backward(dy, cache.mask)


# --------------------------------------------------------------------------
# max-pool, 2x2 window, stride 2

def maxpool_forward(x):
    x = as_tensor(x)
    if x.ndim != 4:
        raise InvalidShapeError(f"pool input must be N x C x H x W, got {x.shape}")
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise InvalidShapeError(f"2x2 pooling needs even H and W, got {x.shape[2]}x{x.shape[3]}")
    y, idx = _kernels.maxpool2_forward(x)
    return y, PoolCache(idx, x.shape)


def maxpool_backward(dy, cache):
    dy = as_tensor(dy)
    if dy.shape != cache.argmax.shape:
        raise InvalidShapeError(f"dy has shape {dy.shape}, expected {cache.argmax.shape}")
    return _kernels.maxpool2_backward(dy, cache.argmax)


# --------------------------------------------------------------------------
# dense

def dense_forward(x, p):
    """``y = x @ W.T + b`` for a N x in batch."""
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] != p.weights.shape[1]:
        raise InvalidShapeError(f"dense input {x.shape} does not match weights {p.weights.shape}")
    y = matmul(x, transpose(p.weights))
    y += p.bias
    return y, DenseCache(x)


def dense_backward(dy, cache, p):
    dy = as_tensor(dy)
    if dy.shape != (cache.x.shape[0], p.weights.shape[0]):
        raise InvalidShapeError(f"dy has shape {dy.shape}, expected {(cache.x.shape[0], p.weights.shape[0])}")
    dyt = transpose(dy)
    dx = matmul(dy, p.weights)
    dw = matmul(dyt, cache.x)
    db = row_sums(dyt)
    return dx, dw, db


# --------------------------------------------------------------------------
# softmax + cross-entropy

def softmax(logits):
    z = as_tensor(logits)
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch.

    Returns ``(loss, probs, dlogits)`` with ``dlogits = (probs - onehot) / N``.
    """
    z = as_tensor(logits)
    labels = np.asarray(labels)
    if z.ndim != 2 or z.shape[0] == 0:
        raise InvalidShapeError(f"logits must be a non-empty N x C matrix, got {z.shape}")
    n, c = z.shape
    if labels.shape != (n,):
        raise InvalidShapeError(f"{labels.shape[0] if labels.ndim else 0} labels for {n} rows")
    if not np.issubdtype(labels.dtype, np.integer) or labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels must be integers in [0, {c - 1}]")
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    total = e.sum(axis=1, keepdims=True)
    probs = e / total
    rows = np.arange(n)
    log_p = shifted[rows, labels] - np.log(total[:, 0])
    loss = -float(log_p.mean())
    dlogits = probs.copy()
    dlogits[rows, labels] -= 1.0
    dlogits /= n
    return loss, probs, dlogits


# --------------------------------------------------------------------------
# initialisation

def he_init(shape, rng, fan_in=None):
    """Zero-mean Gaussian with std ``sqrt(2 / fan_in)``.

    ``fan_in`` defaults to the product of all but the leading extent, i.e.
    C*K*K for conv filters and the input width for dense weights.
    """
    shape = check_shape(shape)
    if fan_in is None:
        fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
