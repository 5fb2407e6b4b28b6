"""Dense tensors and the reverse-mode tape they are differentiated on.

A ``Tensor`` is a thin wrapper around a numpy array.  Differentiable
operations (see :mod:`skgfat.numcore.ops`) record one entry per primitive
onto the currently active ``Tape``; replaying the entries in reverse order
propagates gradients from a root tensor back to any requested leaves.

Tapes are opened as context managers.  Forward passes executed with no
active tape record nothing and are pure inference.  The active tape is
thread-local, so independent batches may be evaluated concurrently as long
as each thread opens its own tape.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

_state = threading.local()


def active_tape() -> Optional["Tape"]:
    return getattr(_state, "tape", None)


class Tensor:
    """Multi-dimensional real array, optionally carrying a gradient."""

    __slots__ = ("data", "grad")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class TapeEntry:
    """One recorded primitive: its output, inputs, and a pullback.

    ``pullback(grad_out, need)`` returns one gradient array (or None) per
    input; ``need`` flags which of them the replay actually wants, letting
    the closure skip dead branches (e.g. weight gradients during an
    input-gradient-only attack backward).
    """

    __slots__ = ("output", "inputs", "pullback")

    def __init__(self, output: Tensor, inputs: Sequence[Tensor], pullback: Callable):
        self.output = output
        self.inputs = tuple(inputs)
        self.pullback = pullback


class Tape:
    """Ordered record of the primitive operations of one forward pass."""

    def __init__(self):
        self._entries: list[TapeEntry] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        self._outer = active_tape()
        _state.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _state.tape = self._outer
        return False

    def record(self, output: Tensor, inputs: Sequence[Tensor], pullback: Callable) -> None:
        self._entries.append(TapeEntry(output, inputs, pullback))
        self._produced.add(id(output))

    def __len__(self) -> int:
        return len(self._entries)

    def backward(self, root: Tensor, seed: Optional[np.ndarray] = None,
                 wrt: Optional[Sequence[Tensor]] = None) -> None:
        """Accumulate d(root)/d(leaf) into ``leaf.grad`` for the recorded graph.

        ``seed`` defaults to all-ones (the usual choice for a scalar loss)
        and must match the root's shape.  When ``wrt`` is given, gradients
        are only propagated along paths that reach one of those tensors;
        otherwise every leaf in the graph receives its gradient.
        """
        if not self._entries:
            raise RuntimeError("backward called on a tape with no recorded forward pass")
        if id(root) not in self._produced:
            raise RuntimeError("root tensor was not produced on this tape")
        if seed is None:
            seed = np.ones_like(root.data)
        else:
            seed = np.asarray(seed, dtype=root.data.dtype)
            if seed.shape != root.data.shape:
                raise ValueError(
                    f"seed gradient shape {seed.shape} does not match root shape {root.data.shape}"
                )

        needed: Optional[set[int]] = None
        if wrt is not None:
            needed = {id(t) for t in wrt}
            for entry in self._entries:
                if any(id(t) in needed for t in entry.inputs):
                    needed.add(id(entry.output))

        for entry in self._entries:
            entry.output.grad = None
            for t in entry.inputs:
                t.grad = None
        root.grad = seed

        for entry in reversed(self._entries):
            gout = entry.output.grad
            if gout is None:
                continue
            if needed is not None and id(entry.output) not in needed:
                continue
            if needed is None:
                need = tuple(True for _ in entry.inputs)
            else:
                need = tuple(id(t) in needed for t in entry.inputs)
            if not any(need):
                continue
            grads = entry.pullback(gout, need)
            for t, g in zip(entry.inputs, grads):
                if g is None:
                    continue
                t.grad = g if t.grad is None else t.grad + g


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)
