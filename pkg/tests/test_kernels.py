"""The two kernel backends must be interchangeable: same math, same shapes,
agreement to float64 roundoff on forward and backward paths."""

import os
import subprocess
import sys

import numpy as np
import pytest

from edt.kernels import numpy_backend

try:
    from edt.kernels import numba_backend
except ImportError:  # pragma: no cover - numba is a hard dependency here
    numba_backend = None

KERNELS = [
    ("layernorm_fwd", (np.zeros((4, 8)),)),
    ("softmax_fwd", (np.zeros((4, 8)),)),
    ("gelu_fwd", (np.zeros(16),)),
    ("silu_fwd", (np.zeros(16),)),
]


def _rows(rng, shape=(37, 24)):
    return np.ascontiguousarray(rng.normal(size=shape) * 3.0)


@pytest.mark.skipif(numba_backend is None, reason="numba not installed")
def test_backends_agree_on_row_kernels():
    rng = np.random.default_rng(0)
    x = _rows(rng)
    dy = _rows(rng)

    y_np, inv_np = numpy_backend.layernorm_fwd(x, 1e-6)
    y_nb, inv_nb = numba_backend.layernorm_fwd(x, 1e-6)
    assert np.allclose(y_np, y_nb, rtol=1e-12, atol=1e-12)
    assert np.allclose(inv_np, inv_nb, rtol=1e-12, atol=1e-12)
    g_np = numpy_backend.layernorm_bwd(dy, y_np, inv_np)
    g_nb = numba_backend.layernorm_bwd(dy, y_nb, inv_nb)
    assert np.allclose(g_np, g_nb, rtol=1e-12, atol=1e-12)

    s_np = numpy_backend.softmax_fwd(x)
    s_nb = numba_backend.softmax_fwd(x)
    assert np.allclose(s_np, s_nb, rtol=1e-12, atol=1e-12)
    gs_np = numpy_backend.softmax_bwd(dy, s_np)
    gs_nb = numba_backend.softmax_bwd(dy, s_nb)
    assert np.allclose(gs_np, gs_nb, rtol=1e-12, atol=1e-12)


@pytest.mark.skipif(numba_backend is None, reason="numba not installed")
def test_backends_agree_on_pointwise_kernels():
    rng = np.random.default_rng(1)
    x = np.ascontiguousarray(rng.normal(size=2049) * 4.0)
    dy = np.ascontiguousarray(rng.normal(size=2049))
    for name in ("gelu", "silu"):
        f_np = getattr(numpy_backend, f"{name}_fwd")(x)
        f_nb = getattr(numba_backend, f"{name}_fwd")(x)
        assert np.allclose(f_np, f_nb, rtol=1e-12, atol=1e-12), name
        b_np = getattr(numpy_backend, f"{name}_bwd")(dy, x)
        b_nb = getattr(numba_backend, f"{name}_bwd")(dy, x)
        assert np.allclose(b_np, b_nb, rtol=1e-12, atol=1e-12), name


def test_layernorm_normalizes_rows():
    x = np.random.default_rng(2).normal(size=(10, 64)) * 7 + 3
    y, inv = numpy_backend.layernorm_fwd(x, 1e-6)
    assert np.allclose(y.mean(axis=1), 0.0, atol=1e-12)
    assert np.allclose(y.std(axis=1), 1.0, atol=1e-4)
    assert inv.shape == (10,)


def test_softmax_rows_are_distributions():
    x = np.random.default_rng(3).normal(size=(10, 16)) * 10
    s = numpy_backend.softmax_fwd(x)
    assert np.all(s > 0)
    assert np.allclose(s.sum(axis=1), 1.0)
    # max-subtraction keeps huge logits finite
    s2 = numpy_backend.softmax_fwd(np.full((2, 4), 1e4))
    assert np.allclose(s2, 0.25)


def test_gelu_silu_reference_points():
    z = np.zeros(1)
    assert numpy_backend.gelu_fwd(z)[0] == 0.0
    assert numpy_backend.silu_fwd(z)[0] == 0.0
    big = np.array([20.0])
    assert abs(numpy_backend.gelu_fwd(big)[0] - 20.0) < 1e-6
    assert abs(numpy_backend.silu_fwd(big)[0] - 20.0) < 1e-6


def test_env_flag_selects_backend():
    code = "import edt.kernels as k; print(k.BACKEND)"
    for flag, expect in (("numpy", "numpy"), ("numba", "numba")):
        env = dict(os.environ, EDT_KERNELS=flag)
        out = subprocess.run(
            [sys.executable, "-c", code], env=env, capture_output=True, text=True
        )
        assert out.returncode == 0, out.stderr
        assert out.stdout.strip() == expect
    env = dict(os.environ, EDT_KERNELS="nonsense")
    out = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True
    )
    assert out.returncode != 0
