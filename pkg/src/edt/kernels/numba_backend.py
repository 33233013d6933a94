"""Numba-compiled elementwise kernels.

Fused loop versions of the numpy backend: one pass per row, no temporary
arrays. fastmath stays off so both backends agree bit-for-bit in their
reduction order-insensitive parts and to whatever numpy produces is close
enough for the shared tolerance tests. Compilation is cached on disk.
"""

import math

import numpy as np
from numba import njit

from .numpy_backend import GELU_A, GELU_C

NAME = "numba"


@njit(cache=True)
def layernorm_fwd(x, eps):
    rows, cols = x.shape
    y = np.empty_like(x)
    invstd = np.empty(rows, dtype=x.dtype)
    for i in range(rows):
        mu = 0.0
        for j in range(cols):
            mu += x[i, j]
        mu /= cols
        var = 0.0
        for j in range(cols):
            d = x[i, j] - mu
            var += d * d
        var /= cols
        inv = 1.0 / math.sqrt(var + eps)
        invstd[i] = inv
        for j in range(cols):
            y[i, j] = (x[i, j] - mu) * inv
    return y, invstd


@njit(cache=True)
def layernorm_bwd(dy, y, invstd):
    rows, cols = dy.shape
    dx = np.empty_like(dy)
    for i in range(rows):
        m1 = 0.0
        m2 = 0.0
        for j in range(cols):
            m1 += dy[i, j]
            m2 += dy[i, j] * y[i, j]
        m1 /= cols
        m2 /= cols
        inv = invstd[i]
        for j in range(cols):
            dx[i, j] = inv * (dy[i, j] - m1 - y[i, j] * m2)
    return dx


@njit(cache=True)
def softmax_fwd(x):
    rows, cols = x.shape
    y = np.empty_like(x)
    for i in range(rows):
        m = x[i, 0]
        for j in range(1, cols):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(cols):
            e = math.exp(x[i, j] - m)
            y[i, j] = e
            s += e
        for j in range(cols):
            y[i, j] /= s
    return y


@njit(cache=True)
def softmax_bwd(dy, y):
    rows, cols = dy.shape
    dx = np.empty_like(dy)
    for i in range(rows):
        s = 0.0
        for j in range(cols):
            s += dy[i, j] * y[i, j]
        for j in range(cols):
            dx[i, j] = y[i, j] * (dy[i, j] - s)
    return dx


@njit(cache=True)
def gelu_fwd(x):
    n = x.shape[0]
    y = np.empty_like(x)
    for i in range(n):
        v = x[i]
        u = GELU_C * (v + GELU_A * v * v * v)
        y[i] = 0.5 * v * (1.0 + math.tanh(u))
    return y


@njit(cache=True)
def gelu_bwd(dy, x):
    n = x.shape[0]
    dx = np.empty_like(x)
    for i in range(n):
        v = x[i]
        v2 = v * v
        u = GELU_C * (v + GELU_A * v * v2)
        t = math.tanh(u)
        du = GELU_C * (1.0 + 3.0 * GELU_A * v2)
        dx[i] = dy[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
    return dx


@njit(cache=True)
def silu_fwd(x):
    n = x.shape[0]
    y = np.empty_like(x)
    for i in range(n):
        s = 1.0 / (1.0 + math.exp(-x[i]))
        y[i] = x[i] * s
    return y


@njit(cache=True)
def silu_bwd(dy, x):
    n = x.shape[0]
    dx = np.empty_like(x)
    for i in range(n):
        s = 1.0 / (1.0 + math.exp(-x[i]))
        dx[i] = dy[i] * (s * (1.0 + x[i] * (1.0 - s)))
    return dx
