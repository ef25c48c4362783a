"""Multiply-operation tallies for the float and quantized inference paths.

The inference kernels report how many float and integer multiplies they
perform through this module. A tally is active only inside ``tally()``;
otherwise the hooks are no-ops. Integer MVM kernels additionally run inside
``kernel()`` scope: any float multiply reported there is counted separately,
which is how the no-float-in-kernel guarantee is checked.

Tallies are process-global and not synchronized; collect them from a single
thread.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass


@dataclass
class OpTally:
    float_mults: int = 0
    int_mults: int = 0
    kernel_float_mults: int = 0


_stack: list[OpTally] = []
_kernel_depth = 0


@contextmanager
def tally():
    """Collect multiply counts for everything executed in this block."""
    t = OpTally()
    _stack.append(t)
    try:
        yield t
    finally:
        _stack.remove(t)


@contextmanager
def kernel():
    """Mark an integer-kernel region; float multiplies inside it are flagged."""
    global _kernel_depth
    _kernel_depth += 1
    try:
        yield
    finally:
        _kernel_depth -= 1


def add_float_mults(n: int) -> None:
    if not _stack:
        return
    if _kernel_depth > 0:
        for t in _stack:
            t.kernel_float_mults += n
    else:
        for t in _stack:
            t.float_mults += n


def add_int_mults(n: int) -> None:
    for t in _stack:
        t.int_mults += n
