"""Dense tensors with reverse-mode differentiation.

Scope is exactly what the network needs: (batched) matmul, broadcasting
add/mul, reshape/transpose/slice/concat, embedding gather, mask-select,
layernorm, row softmax, gelu/silu, global reductions. Every public op
verifies its output is finite (NaN/Inf raises instead of propagating) unless
finite checks are switched off. Gradients flow through a recorded tape;
an op recorded without a gradient rule raises CapabilityError when reached.
"""

import os

import numpy as np

from .. import kernels
from ..errors import CapabilityError, DimensionError, NumericError
from .opcount import add_macs

_FINITE_CHECKS = os.environ.get("EDT_FINITE_CHECKS", "on").lower() != "off"
_GRAD_ENABLED = True


def set_finite_checks(enabled):
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


def finite_checks_enabled():
    return _FINITE_CHECKS


class no_grad:
    """Context manager: ops inside build no tape and detach their outputs."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _check_finite(data, op):
    if _FINITE_CHECKS and not np.isfinite(data).all():
        raise NumericError(f"non-finite values produced by op '{op}'")


def _unbroadcast(g, shape):
    """Sum g down to `shape`, undoing numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """A numpy array plus an optional gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_op")

    def __init__(self, data, requires_grad=False, _parents=(), _op="leaf"):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        _check_finite(arr, _op)
        self.data = arr
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self.grad = None
        self._parents = _parents if self.requires_grad or _parents else ()
        self._op = _op

    # -- construction of op results --------------------------------------

    @staticmethod
    def _result(data, parents, op):
        rg = _GRAD_ENABLED and any(p.requires_grad for p, _ in parents)
        out = Tensor.__new__(Tensor)
        _check_finite(data, op)
        out.data = data
        out.requires_grad = rg
        out.grad = None
        out._parents = tuple(parents) if rg else ()
        out._op = op
        return out

    # -- basics -----------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor._result(self.data, (), "detach")

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # -- arithmetic ---------------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        a, b = self, other
        data = a.data + b.data
        parents = (
            (a, lambda g: _unbroadcast(g, a.data.shape)),
            (b, lambda g: _unbroadcast(g, b.data.shape)),
        )
        return Tensor._result(data, parents, "add")

    __radd__ = __add__

    def __neg__(self):
        return Tensor._result(-self.data, ((self, lambda g: -g),), "neg")

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        other = self._coerce(other)
        a, b = self, other
        data = a.data * b.data
        ad, bd = a.data, b.data
        parents = (
            (a, lambda g: _unbroadcast(g * bd, ad.shape)),
            (b, lambda g: _unbroadcast(g * ad, bd.shape)),
        )
        return Tensor._result(data, parents, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor) and other.data.ndim > 0:
            raise CapabilityError("tensor/tensor division is not supported")
        scale = float(other.data) if isinstance(other, Tensor) else float(other)
        return self * (1.0 / scale)

    def __matmul__(self, other):
        if not isinstance(other, Tensor):
            other = self._coerce(other)
        a, b = self, other
        if a.data.ndim < 2 or b.data.ndim < 2:
            raise DimensionError("matmul operands must have ndim >= 2")
        if a.data.shape[-1] != b.data.shape[-2]:
            raise DimensionError(
                f"matmul inner extents disagree: {a.data.shape} @ {b.data.shape}"
            )
        data = np.matmul(a.data, b.data)
        m, k, p = a.data.shape[-2], a.data.shape[-1], b.data.shape[-1]
        batch = int(np.prod(data.shape[:-2], dtype=np.int64)) if data.ndim > 2 else 1
        add_macs(batch * m * k * p)
        ad, bd = a.data, b.data

        def vjp_a(g):
            return _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)

        def vjp_b(g):
            return _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)

        return Tensor._result(data, ((a, vjp_a), (b, vjp_b)), "matmul")

    # -- shape ops ----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        data = self.data.reshape(shape)
        return Tensor._result(data, ((self, lambda g: g.reshape(old)),), "reshape")

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = tuple(np.argsort(axes))
        data = self.data.transpose(axes)
        return Tensor._result(
            data, ((self, lambda g: g.transpose(inv)),), "transpose"
        )

    def __getitem__(self, key):
        data = self.data[key]
        shape, dtype = self.data.shape, self.data.dtype

        def vjp(g):
            z = np.zeros(shape, dtype=dtype)
            z[key] = g
            return z

        return Tensor._result(data, ((self, vjp),), "slice")

    # -- reductions -----------------------------------------------------------

    def sum(self):
        data = self.data.sum()
        shape, dtype = self.data.shape, self.data.dtype
        return Tensor._result(
            np.asarray(data),
            ((self, lambda g: np.broadcast_to(g, shape).astype(dtype, copy=False)),),
            "sum",
        )

    def mean(self):
        n = self.data.size
        data = self.data.mean()
        shape, dtype = self.data.shape, self.data.dtype
        return Tensor._result(
            np.asarray(data),
            ((self, lambda g: np.broadcast_to(g / n, shape).astype(dtype, copy=False)),),
            "mean",
        )

    # -- forward-only ----------------------------------------------------------

    def round(self):
        # no gradient rule on purpose: reaching it in backward raises
        return Tensor._result(np.round(self.data), ((self, None),), "round")

    # -- autodiff ----------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise DimensionError("backward requires a scalar output")
        if not self.requires_grad:
            raise CapabilityError(
                "backward on a tensor recorded outside the tape (requires_grad=False)"
            )
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if not node._parents or node.grad is None:
                continue
            g = node.grad
            for parent, vjp in node._parents:
                if not parent.requires_grad:
                    continue
                if vjp is None:
                    raise CapabilityError(
                        f"op '{node._op}' has no gradient rule"
                    )
                pg = vjp(g)
                parent.grad = pg if parent.grad is None else parent.grad + pg


# -- free functions ------------------------------------------------------


def tensor(data, requires_grad=False, dtype=None):
    arr = np.asarray(data, dtype=dtype)
    return Tensor(arr, requires_grad=requires_grad)


def matmul(a, b):
    return a @ b


def concat(tensors, axis):
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    parents = []
    for i, t in enumerate(tensors):
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(g, lo=lo, hi=hi):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            return g[tuple(index)]

        parents.append((t, vjp))
    return Tensor._result(data, tuple(parents), "concat")


def gather(table, indices):
    """Row lookup table[indices]; gradients accumulate per repeated index."""
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise DimensionError("gather indices must be integers")
    data = table.data[idx]
    shape, dtype = table.data.shape, table.data.dtype

    def vjp(g):
        z = np.zeros(shape, dtype=dtype)
        np.add.at(z, idx, g)
        return z

    return Tensor._result(data, ((table, vjp),), "gather")


def where(cond, a, b):
    """Elementwise select: cond is a constant boolean array."""
    cond = np.asarray(cond, dtype=bool)
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.data.dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.data.dtype))
    data = np.where(cond, a.data, b.data)
    ash, bsh = a.data.shape, b.data.shape
    parents = (
        (a, lambda g: _unbroadcast(np.where(cond, g, 0.0), ash)),
        (b, lambda g: _unbroadcast(np.where(cond, 0.0, g), bsh)),
    )
    return Tensor._result(data, parents, "where")


def _rows(x):
    d = x.shape[-1]
    return np.ascontiguousarray(x).reshape(-1, d)


def layernorm(x, eps=1e-6):
    """Zero-mean unit-variance over the last axis; no affine parameters."""
    x2 = _rows(x.data)
    y2, invstd = kernels.layernorm_fwd(x2, eps)
    shape = x.data.shape

    def vjp(g):
        g2 = _rows(g)
        return kernels.layernorm_bwd(g2, y2, invstd).reshape(shape)

    return Tensor._result(y2.reshape(shape), ((x, vjp),), "layernorm")


def softmax_rows(x):
    """Stabilized softmax over the last axis; each row sums to 1."""
    x2 = _rows(x.data)
    y2 = kernels.softmax_fwd(x2)
    shape = x.data.shape

    def vjp(g):
        g2 = _rows(g)
        return kernels.softmax_bwd(g2, y2).reshape(shape)

    return Tensor._result(y2.reshape(shape), ((x, vjp),), "softmax")


def gelu(x):
    flat = np.ascontiguousarray(x.data).reshape(-1)
    y = kernels.gelu_fwd(flat)
    shape = x.data.shape

    def vjp(g):
        return kernels.gelu_bwd(np.ascontiguousarray(g).reshape(-1), flat).reshape(shape)

    return Tensor._result(y.reshape(shape), ((x, vjp),), "gelu")


def silu(x):
    flat = np.ascontiguousarray(x.data).reshape(-1)
    y = kernels.silu_fwd(flat)
    shape = x.data.shape

    def vjp(g):
        return kernels.silu_bwd(np.ascontiguousarray(g).reshape(-1), flat).reshape(shape)

    return Tensor._result(y.reshape(shape), ((x, vjp),), "silu")


def mse(a, b):
    """Mean squared error over all elements."""
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.data.dtype))
    d = a - b
    return (d * d).mean()


def grad(loss, params):
    """Gradients of a freshly built scalar `loss` w.r.t. each of `params`."""
    params = list(params)
    for p in params:
        p.grad = None
    loss.backward()
    out = []
    for p in params:
        if p.grad is None:
            out.append(np.zeros_like(p.data))
        else:
            out.append(p.grad)
    return out
