import numpy as np
import pytest


def naive_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    c = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            c[i, j] = acc
    return c


def naive_conv(x, w, b, s, p):
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    xp = np.zeros((n, c, h + 2 * p, wd + 2 * p))
    xp[:, :, p:p + h, p:p + wd] = x
    ho = (h + 2 * p - k) // s + 1
    wo = (wd + 2 * p - k) // s + 1
    y = np.zeros((n, f, ho, wo))
    for i in range(n):
        for o in range(f):
            for oi in range(ho):
                for oj in range(wo):
                    acc = b[o]
                    for ch in range(c):
                        for ki in range(k):
                            for kj in range(k):
                                acc += w[o, ch, ki, kj] * xp[i, ch, oi * s + ki, oj * s + kj]
                    y[i, o, oi, oj] = acc
    return y


def rel_err(a, n):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def numeric_grad(f, x, h=1e-5):
    """Central differences of scalar ``f`` w.r.t. every entry of ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
