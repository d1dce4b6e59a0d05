"""Dense float tensors with reverse-mode differentiation.

Every numeric quantity in this package lives in a :class:`Tensor`: a
contiguous numpy array (float32 or float64) plus an optional record of the
operation that produced it.  Calling :meth:`Tensor.backward` on a scalar
replays the recorded operations in reverse topological order and accumulates
gradients into every reachable tensor that requires them.

Design rules enforced here:

* only 32- and 64-bit floats; operands of a binary op must share a dtype
* broadcasting follows numpy's trailing-axes rule and nothing more;
  incompatible shapes raise :class:`DimensionError`
* tensors are immutable once created (ops return new tensors), so weights
  can be shared read-only between concurrent forward passes
"""
from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import _count

ALLOWED_DTYPES = (np.float32, np.float64)


class DimensionError(ValueError):
    """Shape or broadcasting mismatch between operands."""


_grad_enabled = True


class no_grad:
    """Context manager that disables recording, for inference-only passes."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def is_grad_enabled() -> bool:
    return _grad_enabled


def _as_dtype(dtype) -> np.dtype:
    dt = np.dtype(dtype)
    if dt.type not in ALLOWED_DTYPES:
        raise TypeError(f"only float32/float64 tensors are supported, got {dt}")
    return dt


class Tensor:
    """N-dimensional dense float array with optional gradient recording."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    # keep numpy from hijacking `ndarray <op> Tensor`
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("wrapping a Tensor in a Tensor; use .detach() or .astype()")
        if dtype is not None:
            arr = np.asarray(data, dtype=_as_dtype(dtype))
        else:
            arr = np.asarray(data)
            if arr.dtype.type not in ALLOWED_DTYPES:
                arr = arr.astype(np.float32)
        self.data: np.ndarray = np.ascontiguousarray(arr)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._vjp: Optional[Callable] = None

    # ------------------------------------------------------------------
    # basic introspection
    # ------------------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def __repr__(self):
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{grad})"

    def numpy(self) -> np.ndarray:
        """The underlying array. Treat as read-only."""
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Same values, cut out of the recorded computation."""
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        """Dtype-converted copy, cut out of the recorded computation."""
        return Tensor(self.data.astype(_as_dtype(dtype)), requires_grad=False)

    # ------------------------------------------------------------------
    # graph construction
    # ------------------------------------------------------------------
    @staticmethod
    def _make(data: np.ndarray, parents: Sequence["Tensor"], vjp: Callable) -> "Tensor":
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._vjp = vjp
        return out

    def backward(self) -> None:
        """Accumulate gradients of this scalar w.r.t. every recorded input."""
        if self.data.size != 1:
            raise DimensionError("backward() starts from a scalar tensor")
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")

        # iterative post-order: children first, so reversed(topo) is a valid
        # reverse-topological visitation that touches each node exactly once
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        flowing: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pid = id(parent)
                if pid in flowing:
                    flowing[pid] = flowing[pid] + pg
                else:
                    flowing[pid] = pg

    # ------------------------------------------------------------------
    # dtype / broadcasting helpers
    # ------------------------------------------------------------------
    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            if other.dtype != self.dtype:
                raise TypeError(f"mixed dtypes {self.dtype.name} vs {other.dtype.name}")
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Tensor(np.asarray(other, dtype=self.dtype))
        raise TypeError(f"cannot combine Tensor with {type(other).__name__}")

    @staticmethod
    def _bshape(a: "Tensor", b: "Tensor") -> tuple:
        try:
            return np.broadcast_shapes(a.shape, b.shape)
        except ValueError as exc:
            raise DimensionError(f"shapes {a.shape} and {b.shape} do not broadcast") from exc

    # ------------------------------------------------------------------
    # arithmetic
    # ------------------------------------------------------------------
    def __add__(self, other):
        other = self._coerce(other)
        self._bshape(self, other)
        data = self.data + other.data

        def vjp(g):
            return _unbroadcast(g, self.shape), _unbroadcast(g, other.shape)

        return Tensor._make(data, (self, other), vjp)

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        other = self._coerce(other)
        self._bshape(self, other)
        data = self.data - other.data

        def vjp(g):
            return _unbroadcast(g, self.shape), _unbroadcast(-g, other.shape)

        return Tensor._make(data, (self, other), vjp)

    def __rsub__(self, other):
        return self._coerce(other).__sub__(self)

    def __mul__(self, other):
        other = self._coerce(other)
        self._bshape(self, other)
        data = self.data * other.data

        def vjp(g):
            return (_unbroadcast(g * other.data, self.shape),
                    _unbroadcast(g * self.data, other.shape))

        return Tensor._make(data, (self, other), vjp)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        self._bshape(self, other)
        data = self.data / other.data

        def vjp(g):
            return (_unbroadcast(g / other.data, self.shape),
                    _unbroadcast(-g * self.data / (other.data * other.data), other.shape))

        return Tensor._make(data, (self, other), vjp)

    def __rtruediv__(self, other):
        return self._coerce(other).__truediv__(self)

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("pow exponent must be a python scalar")
        data = self.data ** p

        def vjp(g):
            return (g * p * self.data ** (p - 1),)

        return Tensor._make(data, (self,), vjp)

    def __matmul__(self, other):
        return matmul(self, other)

    # ------------------------------------------------------------------
    # shape ops
    # ------------------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        try:
            data = self.data.reshape(shape)
        except ValueError as exc:
            raise DimensionError(f"cannot reshape {old} to {shape}") from exc
        return Tensor._make(data, (self,), lambda g: (g.reshape(old),))

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        data = np.ascontiguousarray(self.data.transpose(axes))
        return Tensor._make(data, (self,), lambda g: (g.transpose(inv),))

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.permute(*axes)

    def __getitem__(self, idx):
        data = self.data[idx]
        if np.isscalar(data) or data.ndim == 0:
            data = np.asarray(data, dtype=self.dtype)
        shape, dtype = self.shape, self.dtype

        def vjp(g):
            full = np.zeros(shape, dtype=dtype)
            np.add.at(full, idx, g)
            return (full,)

        return Tensor._make(np.ascontiguousarray(data), (self,), vjp)

    # ------------------------------------------------------------------
    # reductions
    # ------------------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        data = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.shape

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, shape).astype(self.dtype, copy=False),)
            if not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).astype(self.dtype, copy=False),)

        return Tensor._make(np.asarray(data, dtype=self.dtype), (self,), vjp)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.size if axis is None else _axis_extent(self.shape, axis)
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def max(self, axis=None, keepdims: bool = False):
        data = self.data.max(axis=axis, keepdims=keepdims)

        def vjp(g):
            full = self.data.max(axis=axis, keepdims=True)
            mask = (self.data == full).astype(self.dtype)
            # ties split the gradient evenly; exact ties are measure-zero for
            # the data this package feeds through max
            mask /= mask.sum(axis=axis, keepdims=True)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (mask * g,)

        return Tensor._make(np.asarray(data, dtype=self.dtype), (self,), vjp)


def _axis_extent(shape: tuple, axis) -> int:
    if isinstance(axis, int):
        return shape[axis]
    n = 1
    for a in axis:
        n *= shape[a]
    return n


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ----------------------------------------------------------------------
# free functions
# ----------------------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with batching over leading axes."""
    b = a._coerce(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul needs tensors with at least 2 axes")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"matmul batch shapes differ: {a.shape} x {b.shape}") from exc
    _count.add_macs(data.size // data.shape[-1] * a.shape[-1] * data.shape[-1])

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._make(data, (a, b), vjp)


def _unary(x: Tensor, data: np.ndarray, dfn: Callable[[], np.ndarray]) -> Tensor:
    return Tensor._make(data, (x,), lambda g: (g * dfn(),))


def exp(x: Tensor) -> Tensor:
    data = np.exp(x.data)
    return _unary(x, data, lambda: data)


def log(x: Tensor) -> Tensor:
    return _unary(x, np.log(x.data), lambda: 1.0 / x.data)


def sqrt(x: Tensor) -> Tensor:
    data = np.sqrt(x.data)
    return _unary(x, data, lambda: 0.5 / data)


def tanh(x: Tensor) -> Tensor:
    data = np.tanh(x.data)
    return _unary(x, data, lambda: 1.0 - data * data)


def sigmoid(x: Tensor) -> Tensor:
    data = _sigmoid_np(x.data)
    return _unary(x, data, lambda: data * (1.0 - data))


def _sigmoid_np(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def _softplus_np(v: np.ndarray) -> np.ndarray:
    return np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))


def softplus(x: Tensor) -> Tensor:
    return _unary(x, _softplus_np(x.data), lambda: _sigmoid_np(x.data))


def silu(x: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    s = _sigmoid_np(x.data)
    return _unary(x, x.data * s, lambda: s * (1.0 + x.data * (1.0 - s)))


def mish(x: Tensor) -> Tensor:
    """x * tanh(softplus(x))."""
    sp = _softplus_np(x.data)
    t = np.tanh(sp)
    return _unary(x, x.data * t, lambda: t + x.data * (1.0 - t * t) * _sigmoid_np(x.data))


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-error-function form."""
    from scipy.special import erf

    inv_sqrt2 = 1.0 / np.sqrt(np.asarray(2.0, dtype=x.dtype))
    phi = 0.5 * (1.0 + erf(x.data * inv_sqrt2))
    coef = 1.0 / np.sqrt(np.asarray(2.0 * np.pi, dtype=x.dtype))
    return _unary(x, x.data * phi,
                  lambda: phi + x.data * coef * np.exp(-0.5 * x.data * x.data))


def arctan(x: Tensor) -> Tensor:
    return _unary(x, np.arctan(x.data), lambda: 1.0 / (1.0 + x.data * x.data))


def maximum(a: Tensor, b) -> Tensor:
    """Elementwise max; at exact ties the gradient goes to the first operand."""
    b = a._coerce(b)
    Tensor._bshape(a, b)
    data = np.maximum(a.data, b.data)

    def vjp(g):
        take_a = (a.data >= b.data)
        return (_unbroadcast(np.where(take_a, g, 0.0), a.shape),
                _unbroadcast(np.where(take_a, 0.0, g), b.shape))

    return Tensor._make(data, (a, b), vjp)


def minimum(a: Tensor, b) -> Tensor:
    b = a._coerce(b)
    Tensor._bshape(a, b)
    data = np.minimum(a.data, b.data)

    def vjp(g):
        take_a = (a.data <= b.data)
        return (_unbroadcast(np.where(take_a, g, 0.0), a.shape),
                _unbroadcast(np.where(take_a, 0.0, g), b.shape))

    return Tensor._make(data, (a, b), vjp)


def clamp_min(x: Tensor, lo: float) -> Tensor:
    return maximum(x, lo)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat of an empty sequence")
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise TypeError("concat with mixed dtypes")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat shapes incompatible on axis {axis}") from exc
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return Tensor._make(data, tensors, vjp)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = [t.reshape(t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


def where_mask(mask: np.ndarray, a: Tensor, b) -> Tensor:
    """Select by a constant boolean mask (the mask itself is not recorded)."""
    b = a._coerce(b)
    Tensor._bshape(a, b)
    data = np.where(mask, a.data, b.data)

    def vjp(g):
        return (_unbroadcast(np.where(mask, g, 0.0), a.shape),
                _unbroadcast(np.where(mask, 0.0, g), b.shape))

    return Tensor._make(data, (a, b), vjp)
