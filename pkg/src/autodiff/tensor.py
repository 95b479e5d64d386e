"""Tensors and the reverse-mode tape they are recorded on."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

# Shared lower clamp inside every logarithm (BCE, KL, logit).
EPS = 1e-7

VJP = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """A float64 array that may take part in reverse-mode differentiation.

    Leaf tensors created with ``requires_grad=True`` are parameters: they own a
    gradient buffer that ``Tape.backward`` accumulates into. Tensors produced by
    an op while a tape is active are intermediates; their gradients only live
    inside the tape during the backward sweep.
    """

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self.grad = np.zeros_like(self.values) if requires_grad else None
        self._recorded = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def tracked(self) -> bool:
        """True if gradients can flow into this tensor."""
        return self.requires_grad or self._recorded

    def item(self) -> float:
        return float(self.values)

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, values={self.values!r})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Node:
    output: Tensor
    inputs: tuple[Tensor, ...]
    vjp: VJP


_ACTIVE: list[Tape] = []


class Tape:
    """Records the ops of one forward pass so the pass can be differentiated.

    Used as a context manager; ops called outside any active tape are not
    recorded, which is how inference runs without building a graph::

        with Tape() as tape:
            loss = bce_loss(model_output(x), q)
            tape.backward(loss)
    """

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self) -> Tape:
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        self._nodes.clear()
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def record(self, output: Tensor, inputs: Sequence[Tensor], vjp: VJP):
        output._recorded = True
        self._nodes.append(_Node(output, tuple(inputs), vjp))

    def backward(self, loss: Tensor):
        """Accumulate d(loss)/d(param) into every reachable parameter's buffer.

        The tape is emptied afterwards; a second backward needs a new forward.
        """
        if loss.values.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
        if loss.requires_grad:
            loss.grad += 1.0

        for node in reversed(self._nodes):
            upstream = pending.pop(id(node.output), None)
            if upstream is None:
                continue
            for inp, g in zip(node.inputs, node.vjp(upstream)):
                if g is None or not inp.tracked:
                    continue
                if inp.requires_grad:
                    inp.grad += g
                elif id(inp) in pending:
                    pending[id(inp)] = pending[id(inp)] + g
                else:
                    pending[id(inp)] = g

        self._nodes.clear()


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def emit(values: np.ndarray, inputs: Sequence[Tensor], vjp: VJP) -> Tensor:
    """Wrap an op result, recording it when any input carries gradient."""
    out = Tensor(values)
    tape = active_tape()
    if tape is not None and any(t.tracked for t in inputs):
        tape.record(out, inputs, vjp)
    return out
