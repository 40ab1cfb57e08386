"""Pure numpy kernels.

Reference implementations of the hot inner-loop primitives. The compiled
module `_core` mirrors every function here with identical signatures; the
package picks one backend at import (see `bevrope.kernels`). Arrays are
float64 and C-contiguous; shapes are the caller's responsibility.
"""
from __future__ import annotations

import numpy as np

# gelu tanh-approximation constants
_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def softmax_rows(x):
    """Row-wise softmax with per-row max subtraction."""
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_grad(p, g):
    """Backward of softmax_rows given its output p and upstream grad g."""
    inner = (g * p).sum(axis=1, keepdims=True)
    return p * (g - inner)


def layer_norm(x, gain, bias, eps):
    """Per-row normalization followed by affine (gain, bias).

    Returns (y, xhat, inv_std); the latter two feed the backward pass.
    """
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    return xhat * gain + bias, xhat, inv_std


def layer_norm_grad(xhat, inv_std, gain, g):
    """Backward of layer_norm; returns (gx, ggain, gbias)."""
    gxhat = g * gain
    n = xhat.shape[1]
    mean_g = gxhat.mean(axis=1, keepdims=True)
    mean_gx = (gxhat * xhat).mean(axis=1, keepdims=True)
    gx = inv_std * (gxhat - mean_g - xhat * mean_gx)
    ggain = (g * xhat).sum(axis=0)
    gbias = g.sum(axis=0)
    return gx, ggain, gbias


def rotate_pairs(x, cos, sin):
    """Rotate interleaved channel pairs: pair i of each row by angle[i].

    cos/sin have shape (rows, cols/2); pair i lives in columns (2i, 2i+1).
    """
    even = x[:, 0::2]
    odd = x[:, 1::2]
    out = np.empty_like(x)
    out[:, 0::2] = even * cos - odd * sin
    out[:, 1::2] = even * sin + odd * cos
    return out


def rotate_pairs_grad(cos, sin, g):
    """Backward of rotate_pairs: the inverse (transpose) rotation of g."""
    even = g[:, 0::2]
    odd = g[:, 1::2]
    out = np.empty_like(g)
    out[:, 0::2] = even * cos + odd * sin
    out[:, 1::2] = -even * sin + odd * cos
    return out


def gelu(x):
    """Gaussian error linear unit, tanh approximation (smooth everywhere)."""
    u = _GELU_C * (x + _GELU_A * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_grad(x, g):
    u = _GELU_C * (x + _GELU_A * x * x * x)
    t = np.tanh(u)
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_grad(y, g):
    return g * y * (1.0 - y)


def raster_gauss(cell_xy, obj_xy, sigma):
    """Sum of unnormalized Gaussians: occupancy of each cell center.

    cell_xy: (n, 2), obj_xy: (k, 2); returns (n,) with
    sum_j exp(-||cell_i - obj_j||^2 / (2 sigma^2)).
    """
    n = cell_xy.shape[0]
    if obj_xy.shape[0] == 0:
        return np.zeros(n)
    dx = cell_xy[:, 0:1] - obj_xy[None, :, 0]
    dy = cell_xy[:, 1:2] - obj_xy[None, :, 1]
    d2 = dx * dx + dy * dy
    return np.exp(-d2 / (2.0 * sigma * sigma)).sum(axis=1)
