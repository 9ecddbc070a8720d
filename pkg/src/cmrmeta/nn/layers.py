"""Layer primitives: each ``*_forward`` returns ``(out, cache)`` and each
``*_backward`` maps the upstream gradient to input and parameter gradients.

Feature maps are NHWC.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Same-padded stride-1 convolution. ``w`` has shape (k, k, C_in, C_out)."""
    k = w.shape[0]
    pad = k // 2
    n, h, wd, c = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    # (N, H, W, C, k, k) -> rows of (k, k, C) patches to match the weight layout
    win = sliding_window_view(xp, (k, k), axis=(1, 2))
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * h * wd, k * k * c)
    wmat = w.reshape(k * k * c, -1)
    out = (cols @ wmat + b).reshape(n, h, wd, -1)
    return out, (x.shape, cols, w)


def conv_backward(dout: np.ndarray, cache, need_dx: bool = True):
    xshape, cols, w = cache
    n, h, wd, c = xshape
    k = w.shape[0]
    pad = k // 2
    d2 = dout.reshape(n * h * wd, -1)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dxp = np.zeros((n, h + 2 * pad, wd + 2 * pad, c), dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + h, j:j + wd, :] += (d2 @ w[i, j].T).reshape(n, h, wd, c)
    return dxp[:, pad:pad + h, pad:pad + wd, :], dw, db


def relu_forward(x: np.ndarray):
    return np.maximum(x, 0.0), x > 0


def relu_backward(dout: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dout * mask


def maxpool_forward(x: np.ndarray):
    """2x2 max pooling with stride 2."""
    out = np.maximum(np.maximum(x[:, 0::2, 0::2], x[:, 0::2, 1::2]),
                     np.maximum(x[:, 1::2, 0::2], x[:, 1::2, 1::2]))
    return out, (x, out)


def maxpool_backward(dout: np.ndarray, cache) -> np.ndarray:
    # gradient goes to the first maximal element of each window (row-major)
    x, out = cache
    dx = np.zeros_like(x)
    free = np.ones(out.shape, dtype=bool)
    for di in (0, 1):
        for dj in (0, 1):
            hit = (x[:, di::2, dj::2] == out) & free
            dx[:, di::2, dj::2] = dout * hit
            free &= ~hit
    return dx


def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    return x @ w + b, x


def linear_backward(dout: np.ndarray, x: np.ndarray, w: np.ndarray):
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def batchnorm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, mean: np.ndarray,
                      var: np.ndarray, training: bool, eps: float = 1e-5):
    """Returns ``(out, cache, batch_mean, batch_var)``; batch stats are None in eval mode."""
    if training:
        mu = x.mean(axis=0)
        v = x.var(axis=0)
    else:
        mu, v = mean, var
    inv = 1.0 / np.sqrt(v + eps)
    xhat = (x - mu) * inv
    out = gamma * xhat + beta
    return out, (xhat, inv, gamma, training), (mu if training else None), (v if training else None)


def batchnorm_backward(dout: np.ndarray, cache):
    xhat, inv, gamma, training = cache
    dgamma = (dout * xhat).sum(axis=0)
    dbeta = dout.sum(axis=0)
    dxhat = dout * gamma
    if training:
        n = dout.shape[0]
        dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    else:
        dx = dxhat * inv
    return dx, dgamma, dbeta
