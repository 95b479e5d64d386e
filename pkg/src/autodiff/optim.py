"""Gradient descent updates for a ParameterSet: plain SGD or Adam-style adaptive."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from src.autodiff.parameters import Moments, ParameterSet

OPTIMIZER_MODES = ("sgd", "adaptive")


def optimizer_step(
    params: ParameterSet,
    lr: float,
    mode: str = "sgd",
    groups: Iterable[str] | None = None,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> list[str]:
    """Apply one update to the parameters of ``groups`` (all groups by default).

    sgd:      theta <- theta - lr * g
    adaptive: biased first/second moments, bias-corrected with the parameter's
              own step count, theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)

    Returns the names of the parameters that were updated.
    """
    if mode not in OPTIMIZER_MODES:
        raise ValueError(f"Unknown optimizer mode: {mode!r} (expected one of {OPTIMIZER_MODES})")
    names = params.names(groups)

    # check every gradient before touching any parameter
    for name in names:
        if not np.all(np.isfinite(params[name].grad)):
            raise FloatingPointError(f"Non-finite gradient in parameter '{name}'")

    b1, b2 = betas
    for name in names:
        p = params[name]
        g = p.grad
        if mode == "sgd":
            p.values -= lr * g
            continue

        state = params.moments.get(name)
        if state is None:
            state = Moments(np.zeros_like(p.values), np.zeros_like(p.values))
            params.moments[name] = state
        state.steps += 1
        state.first = b1 * state.first + (1.0 - b1) * g
        state.second = b2 * state.second + (1.0 - b2) * (g * g)
        m_hat = state.first / (1.0 - b1 ** state.steps)
        v_hat = state.second / (1.0 - b2 ** state.steps)
        p.values -= lr * m_hat / (np.sqrt(v_hat) + eps)

    return names
