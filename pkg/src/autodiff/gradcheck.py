"""Central finite-difference checks of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from src.autodiff.tensor import Tape, Tensor


@dataclass
class GradCheckResult:
    max_abs_error: float
    max_rel_error: float
    passed: bool


def numerical_gradient(fn: Callable[[], Tensor], tensor: Tensor, step: float = 1e-5) -> np.ndarray:
    """d fn() / d tensor by central differences, perturbing ``tensor.values`` in place."""
    grad = np.zeros_like(tensor.values)
    flat = tensor.values.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        plus = fn().item()
        flat[i] = orig - step
        minus = fn().item()
        flat[i] = orig
        out[i] = (plus - minus) / (2.0 * step)
    return grad


def check_gradients(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    step: float = 1e-5,
    rtol: float = 1e-4,
    atol: float = 1e-6,
) -> GradCheckResult:
    """Compare tape gradients of the scalar ``fn()`` w.r.t. ``inputs`` to finite differences.

    Each input must be a leaf created with ``requires_grad=True``. An entry passes
    when ``|analytic - numeric| <= atol + rtol * |numeric|``.
    """
    for t in inputs:
        if not t.requires_grad:
            raise ValueError(f"check_gradients: input {t.name or t.shape} does not require grad")
        t.zero_grad()
    with Tape() as tape:
        tape.backward(fn())

    max_abs, max_rel, passed = 0.0, 0.0, True
    for t in inputs:
        analytic = t.grad.copy()
        numeric = numerical_gradient(fn, t, step)
        err = np.abs(analytic - numeric)
        max_abs = max(max_abs, float(err.max(initial=0.0)))
        max_rel = max(max_rel, float((err / np.maximum(np.abs(numeric), 1e-12)).max(initial=0.0)))
        passed = passed and bool(np.all(err <= atol + rtol * np.abs(numeric)))
    return GradCheckResult(max_abs, max_rel, passed)
