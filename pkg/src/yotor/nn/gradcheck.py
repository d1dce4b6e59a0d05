"""Finite-difference verification of recorded gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradcheckResult:
    ok: bool
    max_rel_err: float
    worst: str  # "input_idx[flat_component]" of the worst component
    checked: int

    def __bool__(self):
        return self.ok


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[Tensor],
              eps: float = 1e-6, rtol: float = 1e-4,
              max_components: Optional[int] = None,
              rng: Optional[np.random.Generator] = None) -> GradcheckResult:
    """Compare recorded gradients of a scalar function against central
    differences.

    Inputs must be float64 and require grad.  ``max_components`` caps how
    many coordinates of each input get perturbed (sampled without
    replacement) so composite networks stay checkable in reasonable time.

    The per-component score is ``|a - n| / (max(|a|, |n|) + 1e-3)``; the
    additive floor keeps finite-difference noise on true-zero gradients
    from registering while still flagging wrong small gradients.
    """
    for i, t in enumerate(inputs):
        if t.dtype != np.float64:
            raise TypeError(f"gradcheck input {i} must be float64, got {t.dtype}")
        if not t.requires_grad:
            raise ValueError(f"gradcheck input {i} does not require grad")

    for t in inputs:
        t.grad = None
    out = fn(*inputs)
    if out.size != 1:
        raise ValueError("gradcheck target function must return a scalar")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in inputs]

    rng = np.random.default_rng(0) if rng is None else rng
    max_rel = 0.0
    worst = ""
    checked = 0
    for i, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        n = flat.size
        if max_components is not None and n > max_components:
            idxs = rng.choice(n, size=max_components, replace=False)
        else:
            idxs = np.arange(n)
        for j in idxs:
            j = int(j)
            orig = flat[j]
            h = eps * (1.0 + abs(orig))
            with no_grad():
                flat[j] = orig + h
                f_plus = fn(*inputs).item()
                flat[j] = orig - h
                f_minus = fn(*inputs).item()
                flat[j] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = analytic[i].reshape(-1)[j]
            rel = abs(a - numeric) / (max(abs(a), abs(numeric)) + 1e-3)
            checked += 1
            if rel > max_rel:
                max_rel = rel
                worst = f"input{i}[{j}] analytic={a:.6g} numeric={numeric:.6g}"
    return GradcheckResult(ok=bool(max_rel < rtol), max_rel_err=float(max_rel),
                           worst=worst, checked=checked)
