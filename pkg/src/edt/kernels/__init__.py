"""Backend selection for the fused elementwise kernels.

EDT_KERNELS controls which implementation is bound at import time:
  auto   (default) use numba when importable, else fall back to numpy
  numpy  force the pure-numpy reference kernels
  numba  require numba; raise if it cannot be imported

Matrix products always go through numpy BLAS; only the fused row-wise and
pointwise ops are switched here.
"""

import os

from . import numpy_backend

_choice = os.environ.get("EDT_KERNELS", "auto").lower()

if _choice == "numpy":
    _impl = numpy_backend
elif _choice == "numba":
    from . import numba_backend as _impl
elif _choice == "auto":
    try:
        from . import numba_backend as _impl
    except ImportError:
        _impl = numpy_backend
else:
    raise ValueError(
        f"EDT_KERNELS must be one of auto/numpy/numba, got {_choice!r}"
    )

BACKEND = _impl.NAME

layernorm_fwd = _impl.layernorm_fwd
layernorm_bwd = _impl.layernorm_bwd
softmax_fwd = _impl.softmax_fwd
softmax_bwd = _impl.softmax_bwd
gelu_fwd = _impl.gelu_fwd
gelu_bwd = _impl.gelu_bwd
silu_fwd = _impl.silu_fwd
silu_bwd = _impl.silu_bwd
