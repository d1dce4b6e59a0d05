"""In-flight operation accounting.

A :class:`OpCounter` used as a context manager records multiply-accumulate
counts from every matmul and convolution executed inside it, plus named call
events (decode, nms, forward) that the timing harness uses to prove what a
measured interval does and does not contain.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .nn import _count


@dataclass
class OpCounter:
    macs: int = 0
    calls: dict = field(default_factory=dict)

    @property
    def flops(self) -> int:
        # one MAC = one multiply + one add
        return 2 * self.macs

    def __enter__(self) -> "OpCounter":
        _count.push(self)
        return self

    def __exit__(self, *exc):
        _count.pop(self)
        return False


def record_call(name: str) -> None:
    """Report a named event to every active counter."""
    _count.add_call(name)
