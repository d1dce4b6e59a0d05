"""Parameter containers.

A :class:`Module` owns parameters (gradient-bearing tensors assigned as
attributes) and child modules, and can enumerate, count, save, and load
them by dotted name.  Constant arrays a module needs at run time (index
maps, attention masks) are kept as plain numpy attributes so they never
show up as parameters.
"""
from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from .tensor import Tensor

_default_rng = np.random.default_rng(0)


def _rng_or_default(rng: Optional[np.random.Generator]) -> np.random.Generator:
    return _default_rng if rng is None else rng


def trunc_normal(shape, std: float, rng: Optional[np.random.Generator] = None,
                 dtype=np.float32) -> np.ndarray:
    """Normal(0, std) clipped to two standard deviations."""
    r = _rng_or_default(rng)
    v = r.normal(0.0, std, size=shape)
    return np.clip(v, -2.0 * std, 2.0 * std).astype(dtype)


def uniform_fan_in(shape, fan_in: int, rng: Optional[np.random.Generator] = None,
                   dtype=np.float32, gain: float = 1.0) -> np.ndarray:
    # gain=1 matches the usual torch conv default (bound 1/sqrt(fan_in));
    # norm-free conv stacks need gain ~ sqrt(2)*sqrt(3) territory to keep
    # activation variance from decaying layer over layer.
    bound = gain / np.sqrt(fan_in) if fan_in > 0 else 0.0
    r = _rng_or_default(rng)
    return r.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    # ------------------------------------------------------------------
    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for name, p in self._params.items():
            yield (prefix + name if prefix else name), p
        for name, child in self._children.items():
            sub = f"{prefix}{name}." if prefix else f"{name}."
            yield from child.named_parameters(sub)

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def named_modules(self, prefix: str = "") -> Iterator[tuple]:
        yield prefix, self
        for name, child in self._children.items():
            sub = f"{prefix}.{name}" if prefix else name
            yield from child.named_modules(sub)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def param_count(self) -> int:
        """Declared parameter count; leaf layers state theirs in closed form."""
        return sum(c.param_count() for c in self._children.values())

    # ------------------------------------------------------------------
    def state_dict(self) -> dict:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict, strict: bool = True) -> None:
        own = dict(self.named_parameters())
        missing = [k for k in own if k not in state]
        extra = [k for k in state if k not in own]
        if strict and (missing or extra):
            raise KeyError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, p in own.items():
            if name not in state:
                continue
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != parameter {p.shape}")
            p.data = np.ascontiguousarray(arr.astype(p.dtype, copy=False))

    # ------------------------------------------------------------------
    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        self._children[str(len(self._items))] = module
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i: int) -> Module:
        return self._items[i]


class Identity(Module):
    def forward(self, x):
        return x


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, bias: bool = True,
                 rng: Optional[np.random.Generator] = None, dtype=np.float32):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Tensor(trunc_normal((out_features, in_features), 0.02, rng, dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        from .functional import linear
        return linear(x, self.weight, self.bias)

    def param_count(self) -> int:
        n = self.in_features * self.out_features
        return n + (self.out_features if self.bias is not None else 0)


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1,
                 padding: int = 0, bias: bool = True,
                 rng: Optional[np.random.Generator] = None, dtype=np.float32,
                 weight_gain: float = 1.0):
        super().__init__()
        self.in_ch, self.out_ch, self.kernel = in_ch, out_ch, kernel
        self.stride, self.padding = stride, padding
        fan_in = in_ch * kernel * kernel
        self.weight = Tensor(uniform_fan_in((out_ch, in_ch, kernel, kernel), fan_in, rng, dtype,
                                            gain=weight_gain),
                             requires_grad=True)
        self.bias = Tensor(uniform_fan_in((out_ch,), fan_in, rng, dtype),
                           requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        from .functional import conv2d
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def param_count(self) -> int:
        n = self.out_ch * self.in_ch * self.kernel * self.kernel
        return n + (self.out_ch if self.bias is not None else 0)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.dim, self.eps = dim, eps
        self.weight = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        from .functional import layer_norm
        return layer_norm(x, self.weight, self.bias, self.eps)

    def param_count(self) -> int:
        return 2 * self.dim
