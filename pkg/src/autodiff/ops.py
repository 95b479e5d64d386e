"""Differentiable operations used by the pattern and knowledge decoupling models.

Every op takes ``Tensor`` inputs, returns a new ``Tensor`` and, when a tape is
active and an input carries gradient, records a vector-Jacobian product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src.autodiff.tensor import EPS, Tensor, as_tensor, emit


@dataclass(frozen=True)
class GradScale:
    """Magnitude of the gradient reversal applied by ``gradient_reversal``."""

    lam: float = 1.0

    def __post_init__(self):
        if not self.lam >= 0.0:
            raise ValueError(f"Gradient reversal scale must be >= 0, got {self.lam}")


# -- linear algebra ---------------------------------------------------------------


def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """y = xW + b for x of shape (B, din), W (din, dout), b (dout,)."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if x.values.ndim != 2 or W.values.ndim != 2 or b.values.ndim != 1:
        raise ValueError(
            f"affine: expected x (B, din), W (din, dout), b (dout,); "
            f"got {x.shape}, {W.shape}, {b.shape}"
        )
    if x.shape[1] != W.shape[0]:
        raise ValueError(f"affine: x has din={x.shape[1]} but W has {W.shape[0]} rows")
    if W.shape[1] != b.shape[0]:
        raise ValueError(f"affine: W has dout={W.shape[1]} but b has length {b.shape[0]}")

    xv, Wv = x.values, W.values
    out = xv @ Wv + b.values

    def vjp(g):
        return g @ Wv.T, xv.T @ g, g.sum(axis=0)

    return emit(out, (x, W, b), vjp)


def matmul(x: Tensor, W: Tensor) -> Tensor:
    """Matrix product of a (B, n) or (n,) tensor with an (n, m) tensor."""
    x, W = as_tensor(x), as_tensor(W)
    if W.values.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise ValueError(f"matmul: cannot multiply {x.shape} by {W.shape}")
    xv, Wv = x.values, W.values
    out = xv @ Wv

    def vjp(g):
        gW = np.outer(xv, g) if xv.ndim == 1 else xv.T @ g
        return g @ Wv.T, gW

    return emit(out, (x, W), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return emit(a.values + b.values, (a, b), lambda g: (g, g))


def scale(x: Tensor, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return emit(x.values * c, (x,), lambda g: (g * c,))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    original = x.shape
    return emit(x.values.reshape(shape), (x,), lambda g: (g.reshape(original),))


def take_rows(x: Tensor, rows: np.ndarray) -> Tensor:
    """Gather rows of a 2-D tensor; repeated indices accumulate their gradients."""
    x = as_tensor(x)
    rows = np.asarray(rows, dtype=np.int64)
    if x.values.ndim != 2:
        raise ValueError(f"take_rows: expected a 2-D tensor, got shape {x.shape}")
    if rows.size and (rows.min() < 0 or rows.max() >= x.shape[0]):
        raise IndexError(f"take_rows: row index out of range for {x.shape[0]} rows")
    n_rows = x.shape[0]

    def vjp(g):
        gx = np.zeros((n_rows, g.shape[1]))
        np.add.at(gx, rows, g)
        return (gx,)

    return emit(x.values[rows], (x,), vjp)


# -- activations --------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.values > 0
    # np.maximum keeps NaN, so a non-finite input still reaches the loss
    return emit(np.maximum(x.values, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    # tanh form is overflow-free and gives sigmoid(0) == 0.5 exactly
    y = 0.5 * (1.0 + np.tanh(0.5 * x.values))
    return emit(y, (x,), lambda g: (g * y * (1.0 - y),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.values - x.values.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return emit(y, (x,), vjp)


def masked_softmax(x: Tensor, mask: np.ndarray) -> Tensor:
    """Row-wise softmax over the unmasked positions; masked positions are exactly 0.

    ``mask`` is a boolean array of ``x``'s shape, True where a position is removed.
    """
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise ValueError(f"masked_softmax: mask shape {mask.shape} != input shape {x.shape}")
    if np.any(mask.all(axis=-1)):
        raise ValueError("masked_softmax: a row has every position masked")
    z = np.where(mask, -np.inf, x.values)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(mask, 0.0, np.exp(z))
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return emit(y, (x,), vjp)


def logit(p: Tensor) -> Tensor:
    """log(p / (1 - p)) with p clamped to [EPS, 1 - EPS]."""
    p = as_tensor(p)
    inside = (p.values > EPS) & (p.values < 1.0 - EPS)
    pc = np.clip(p.values, EPS, 1.0 - EPS)
    out = np.log(pc) - np.log1p(-pc)
    return emit(out, (p,), lambda g: (g * inside / (pc * (1.0 - pc)),))


# -- losses ---------------------------------------------------------------------------


def bce_loss(p: Tensor, q) -> Tensor:
    """Mean binary cross-entropy of probabilities ``p`` against multi-hot ``q``."""
    p = as_tensor(p)
    qv = q.values if isinstance(q, Tensor) else np.asarray(q, dtype=np.float64)
    if p.shape != qv.shape:
        raise ValueError(f"bce_loss: prediction shape {p.shape} != target shape {qv.shape}")
    inside = (p.values > EPS) & (p.values < 1.0 - EPS)
    pc = np.clip(p.values, EPS, 1.0 - EPS)
    n = pc.size
    loss = -np.mean(qv * np.log(pc) + (1.0 - qv) * np.log1p(-pc))

    def vjp(g):
        return (g * inside * (-qv / pc + (1.0 - qv) / (1.0 - pc)) / n,)

    return emit(np.asarray(loss), (p,), vjp)


def kl_divergence(p: Tensor, r: Tensor, reduction: str = "mean") -> Tensor:
    """KL(p || r) = sum_i p_i log(p_i / r_i), row-wise over the last axis.

    Both inputs must hold distributions (nonnegative, rows summing to 1 within
    1e-9). Entries are clamped to >= EPS inside the logarithms. Rows are
    combined by ``reduction``: ``"mean"`` or ``"sum"``.
    """
    p, r = as_tensor(p), as_tensor(r)
    if p.shape != r.shape:
        raise ValueError(f"kl_divergence: shape mismatch {p.shape} vs {r.shape}")
    if reduction not in ("mean", "sum"):
        raise ValueError(f"kl_divergence: unknown reduction {reduction!r}")
    for label, t in (("p", p), ("r", r)):
        if np.any(t.values < 0.0) or np.any(np.abs(t.values.sum(axis=-1) - 1.0) > 1e-9):
            raise ValueError(f"kl_divergence: {label} is not a normalized distribution")

    pv, rv = p.values, r.values
    pc, rc = np.maximum(pv, EPS), np.maximum(rv, EPS)
    rows = (pv * (np.log(pc) - np.log(rc))).sum(axis=-1)
    n_rows = rows.size
    weight = 1.0 / n_rows if reduction == "mean" else 1.0
    loss = np.asarray(rows.sum() * weight)

    def vjp(g):
        g = g * weight
        gp = g * (np.log(pc) - np.log(rc) + (pv > EPS))
        gr = g * -(pv / rc) * (rv > EPS)
        return gp, gr

    return emit(loss, (p, r), vjp)


# -- gradient routing --------------------------------------------------------------


def gradient_reversal(x: Tensor, grad_scale: GradScale) -> Tensor:
    """Identity on the forward pass; multiplies incoming gradient by -lambda."""
    x = as_tensor(x)
    lam = grad_scale.lam
    return emit(x.values.copy(), (x,), lambda g: (-lam * g,))


def detach(x: Tensor) -> Tensor:
    """Same values, cut from the tape: nothing upstream receives gradient through it."""
    return Tensor(as_tensor(x).values.copy())


def total(*terms: Tensor) -> Tensor:
    """Sum of scalar loss terms."""
    if not terms:
        raise ValueError("total: no terms given")
    out = terms[0]
    for t in terms[1:]:
        out = add(out, t)
    return out
