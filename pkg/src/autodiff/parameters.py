"""Named parameter tensors, their gradient buffers and optimizer moments."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from src.autodiff.tensor import Tensor


@dataclass
class Moments:
    """Adaptive-optimizer state of one parameter."""

    first: np.ndarray
    second: np.ndarray
    steps: int = 0


class ParameterSet:
    """An ordered collection of trainable tensors.

    Every parameter belongs to a group (``"D_a"``, ``"A"``, ``"M"``, ...) so a
    training phase can zero, inspect and step just the groups it updates.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._groups: dict[str, str] = {}
        self.moments: dict[str, Moments] = {}

    def add(self, name: str, values, group: str) -> Tensor:
        if name in self._params:
            raise ValueError(f"Duplicate parameter name: {name}")
        tensor = Tensor(np.array(values, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = tensor
        self._groups[name] = group
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def __len__(self) -> int:
        return len(self._params)

    @property
    def groups(self) -> list[str]:
        return list(dict.fromkeys(self._groups.values()))

    def group_of(self, name: str) -> str:
        return self._groups[name]

    def names(self, groups: Iterable[str] | None = None) -> list[str]:
        if groups is None:
            return list(self._params)
        wanted = set(groups)
        unknown = wanted - set(self._groups.values())
        if unknown:
            raise KeyError(f"Unknown parameter groups: {sorted(unknown)}")
        return [n for n, g in self._groups.items() if g in wanted]

    def zero_grad(self, groups: Iterable[str] | None = None):
        for name in self.names(groups):
            self._params[name].zero_grad()

    def fill_(self, value: float):
        """Overwrite every parameter with a constant (used for degenerate test models)."""
        for tensor in self._params.values():
            tensor.values.fill(value)

    def grad_norm(self, groups: Iterable[str] | None = None) -> float:
        return float(np.sqrt(sum(float(np.sum(self._params[n].grad ** 2)) for n in self.names(groups))))

    def state(self) -> dict[str, np.ndarray]:
        """Copies of every parameter value, keyed by name."""
        return {name: t.values.copy() for name, t in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        missing = set(self._params) - set(state)
        if missing:
            raise ValueError(f"State is missing parameters: {sorted(missing)}")
        for name, tensor in self._params.items():
            values = np.asarray(state[name], dtype=np.float64)
            if values.shape != tensor.shape:
                raise ValueError(
                    f"Shape mismatch for '{name}': state has {values.shape}, parameter has {tensor.shape}"
                )
            tensor.values[...] = values

    def fingerprint(self) -> str:
        """SHA-256 over names and raw parameter bytes; equal iff bit-identical."""
        digest = hashlib.sha256()
        for name, tensor in self._params.items():
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(tensor.values).tobytes())
        return digest.hexdigest()
