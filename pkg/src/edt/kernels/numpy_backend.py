"""Pure-numpy elementwise kernels.

All functions take 2-D row-major arrays (rows x features) for the row-wise
ops, or flat 1-D arrays for the pointwise ops, and return arrays of the same
dtype. These are the reference implementations; the numba backend mirrors
them exactly.
"""

import numpy as np

NAME = "numpy"

# tanh-approximation constants shared by both backends
GELU_C = 0.7978845608028654  # sqrt(2/pi)
GELU_A = 0.044715


def layernorm_fwd(x, eps):
    """Normalize each row to zero mean / unit variance. Returns (y, invstd)."""
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    invstd = 1.0 / np.sqrt(var + eps)
    y = xc * invstd
    return y, invstd[:, 0]


def layernorm_bwd(dy, y, invstd):
    m1 = dy.mean(axis=1, keepdims=True)
    m2 = np.mean(dy * y, axis=1, keepdims=True)
    return invstd[:, None] * (dy - m1 - y * m2)


def softmax_fwd(x):
    # max-subtraction keeps exp in range
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd(dy, y):
    s = np.sum(dy * y, axis=1, keepdims=True)
    return y * (dy - s)


def gelu_fwd(x):
    u = GELU_C * (x + GELU_A * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_bwd(dy, x):
    x2 = x * x
    u = GELU_C * (x + GELU_A * x * x2)
    t = np.tanh(u)
    du = GELU_C * (1.0 + 3.0 * GELU_A * x2)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def silu_fwd(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return x * s


def silu_bwd(dy, x):
    s = 1.0 / (1.0 + np.exp(-x))
    return dy * (s * (1.0 + x * (1.0 - s)))
