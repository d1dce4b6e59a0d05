"""Operation counters shared by the tensor ops.

Kept in a tiny leaf module so both :mod:`tensor` and :mod:`functional` can
report into it without import cycles.  The public interface lives in
:mod:`yotor.counters`.
"""
from __future__ import annotations

_active: list = []


def add_macs(n: int) -> None:
    for c in _active:
        c.macs += int(n)


def add_call(name: str) -> None:
    for c in _active:
        c.calls[name] = c.calls.get(name, 0) + 1


def push(counter) -> None:
    _active.append(counter)


def pop(counter) -> None:
    _active.remove(counter)
