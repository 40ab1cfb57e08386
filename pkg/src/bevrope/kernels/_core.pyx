# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels; one-to-one with bevrope.kernels.pure."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt, tanh

cnp.import_array()

cdef double GELU_C = 0.7978845608028654
cdef double GELU_A = 0.044715


def softmax_rows(double[:, ::1] x):
    # row max + normalize in C; the exponential goes through numpy's SIMD loop
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef double m, s
    out_arr = np.empty((n, d))
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        m = x[i, 0]
        for j in range(1, d):
            if x[i, j] > m:
                m = x[i, j]
        for j in range(d):
            out[i, j] = x[i, j] - m
    np.exp(out_arr, out=out_arr)
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += out[i, j]
        for j in range(d):
            out[i, j] /= s
    return out_arr


def softmax_rows_grad(double[:, ::1] p, double[:, ::1] g):
    cdef Py_ssize_t n = p.shape[0], d = p.shape[1], i, j
    cdef double inner
    out_arr = np.empty((n, d))
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        inner = 0.0
        for j in range(d):
            inner += g[i, j] * p[i, j]
        for j in range(d):
            out[i, j] = p[i, j] * (g[i, j] - inner)
    return out_arr


def layer_norm(double[:, ::1] x, double[::1] gain, double[::1] bias, double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef double mu, var, inv, xc
    y_arr = np.empty((n, d))
    xhat_arr = np.empty((n, d))
    inv_arr = np.empty((n, 1))
    cdef double[:, ::1] y = y_arr
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[:, ::1] inv_std = inv_arr
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            xc = x[i, j] - mu
            var += xc * xc
        var /= d
        inv = 1.0 / sqrt(var + eps)
        inv_std[i, 0] = inv
        for j in range(d):
            xhat[i, j] = (x[i, j] - mu) * inv
            y[i, j] = xhat[i, j] * gain[j] + bias[j]
    return y_arr, xhat_arr, inv_arr


def layer_norm_grad(double[:, ::1] xhat, double[:, ::1] inv_std,
                    double[::1] gain, double[:, ::1] g):
    cdef Py_ssize_t n = xhat.shape[0], d = xhat.shape[1], i, j
    cdef double mean_g, mean_gx, gh
    gx_arr = np.empty((n, d))
    ggain_arr = np.zeros(d)
    gbias_arr = np.zeros(d)
    cdef double[:, ::1] gx = gx_arr
    cdef double[::1] ggain = ggain_arr
    cdef double[::1] gbias = gbias_arr
    for i in range(n):
        mean_g = 0.0
        mean_gx = 0.0
        for j in range(d):
            gh = g[i, j] * gain[j]
            mean_g += gh
            mean_gx += gh * xhat[i, j]
        mean_g /= d
        mean_gx /= d
        for j in range(d):
            gh = g[i, j] * gain[j]
            gx[i, j] = inv_std[i, 0] * (gh - mean_g - xhat[i, j] * mean_gx)
            ggain[j] += g[i, j] * xhat[i, j]
            gbias[j] += g[i, j]
    return gx_arr, ggain_arr, gbias_arr


def rotate_pairs(double[:, ::1] x, double[:, ::1] cos, double[:, ::1] sin):
    cdef Py_ssize_t n = x.shape[0], p = cos.shape[1], i, j
    cdef double e, o
    out_arr = np.empty((n, x.shape[1]))
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        for j in range(p):
            e = x[i, 2 * j]
            o = x[i, 2 * j + 1]
            out[i, 2 * j] = e * cos[i, j] - o * sin[i, j]
            out[i, 2 * j + 1] = e * sin[i, j] + o * cos[i, j]
    return out_arr


def rotate_pairs_grad(double[:, ::1] cos, double[:, ::1] sin, double[:, ::1] g):
    cdef Py_ssize_t n = g.shape[0], p = cos.shape[1], i, j
    cdef double e, o
    out_arr = np.empty((n, g.shape[1]))
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        for j in range(p):
            e = g[i, 2 * j]
            o = g[i, 2 * j + 1]
            out[i, 2 * j] = e * cos[i, j] + o * sin[i, j]
            out[i, 2 * j + 1] = -e * sin[i, j] + o * cos[i, j]
    return out_arr


def gelu(double[:, ::1] x):
    # tanh through numpy's SIMD loop, everything else in C
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef double v
    u_arr = np.empty((n, d))
    cdef double[:, ::1] u = u_arr
    for i in range(n):
        for j in range(d):
            v = x[i, j]
            u[i, j] = GELU_C * (v + GELU_A * v * v * v)
    np.tanh(u_arr, out=u_arr)
    for i in range(n):
        for j in range(d):
            u[i, j] = 0.5 * x[i, j] * (1.0 + u[i, j])
    return u_arr


def gelu_grad(double[:, ::1] x, double[:, ::1] g):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef double v, t, du
    u_arr = np.empty((n, d))
    cdef double[:, ::1] u = u_arr
    for i in range(n):
        for j in range(d):
            v = x[i, j]
            u[i, j] = GELU_C * (v + GELU_A * v * v * v)
    np.tanh(u_arr, out=u_arr)
    for i in range(n):
        for j in range(d):
            v = x[i, j]
            t = u[i, j]
            du = GELU_C * (1.0 + 3.0 * GELU_A * v * v)
            u[i, j] = g[i, j] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
    return u_arr


def sigmoid(double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef double v, e
    out_arr = np.empty((n, d))
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        for j in range(d):
            v = x[i, j]
            if v >= 0:
                out[i, j] = 1.0 / (1.0 + exp(-v))
            else:
                e = exp(v)
                out[i, j] = e / (1.0 + e)
    return out_arr


def sigmoid_grad(double[:, ::1] y, double[:, ::1] g):
    cdef Py_ssize_t n = y.shape[0], d = y.shape[1], i, j
    out_arr = np.empty((n, d))
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        for j in range(d):
            out[i, j] = g[i, j] * y[i, j] * (1.0 - y[i, j])
    return out_arr


def raster_gauss(double[:, ::1] cell_xy, double[:, ::1] obj_xy, double sigma):
    cdef Py_ssize_t n = cell_xy.shape[0], k = obj_xy.shape[0], i, j
    cdef double dx, dy, acc, denom = 2.0 * sigma * sigma
    out_arr = np.zeros(n)
    cdef double[::1] out = out_arr
    for i in range(n):
        acc = 0.0
        for j in range(k):
            dx = cell_xy[i, 0] - obj_xy[j, 0]
            dy = cell_xy[i, 1] - obj_xy[j, 1]
            acc += exp(-(dx * dx + dy * dy) / denom)
        out[i] = acc
    return out_arr
