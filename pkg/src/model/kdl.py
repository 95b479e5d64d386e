"""Knowledge-level label decoupling.

Target knowledge is supervised with BCE. Non-target knowledge lives in a
learnable n_p x n_p correlation matrix M: each row holds unconstrained scores
whose masked softmax is a distribution over the other predicates. M learns
from the model's gradient-blocked predictions (L_cm) and the model learns
from the gradient-blocked M row of the most frequent predicate sharing a
pattern with each ground-truth class (L_nt).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src.autodiff.ops import add, bce_loss, detach, kl_divergence, logit, masked_softmax, reshape, scale, take_rows
from src.autodiff.parameters import ParameterSet
from src.autodiff.tensor import Tensor, as_tensor
from src.labels.vocabulary import PredicateVocabulary


@dataclass
class KDLConfig:
    """alpha schedule (alpha0, beta, warmup_epochs) and gamma decay base."""

    alpha0: float = 0.1
    beta: float = 1e-4
    warmup_epochs: int = 10
    gamma_base: float = 0.99

    def validate(self) -> list[str]:
        errors = []
        if self.alpha0 < 0:
            errors.append(f"alpha0 must be >= 0, got {self.alpha0}")
        if self.beta < 0:
            errors.append(f"beta must be >= 0, got {self.beta}")
        if self.warmup_epochs < 0:
            errors.append(f"warmup_epochs must be >= 0, got {self.warmup_epochs}")
        if not 0.0 < self.gamma_base <= 1.0:
            errors.append(f"gamma_base must be in (0, 1], got {self.gamma_base}")
        return errors


class CorrelationMatrix:
    """Identity-initialized n_p x n_p score matrix with its own gradient buffer."""

    group = "M"

    def __init__(self, n_p: int):
        if n_p < 1:
            raise ValueError(f"Correlation matrix needs n_p >= 1, got {n_p}")
        self.n_p = n_p
        self.params = ParameterSet()
        self.scores = self.params.add("correlation.M", np.eye(n_p), self.group)

    @property
    def values(self) -> np.ndarray:
        return self.scores.values

    def row(self, k: int) -> Tensor:
        _check_index(k, self.n_p)
        return reshape(take_rows(self.scores, np.array([k])), (self.n_p,))

    def normalized(self) -> np.ndarray:
        """Row-wise softmax of the scores (for export and inspection)."""
        z = self.values - self.values.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)


@dataclass
class KDLLoss:
    total: Tensor
    target: Tensor
    correlation: Tensor
    transfer: Tensor
    alpha: float


def _check_index(k, n_p: int):
    k = np.asarray(k)
    if np.any(k < 0) or np.any(k >= n_p):
        raise IndexError(f"Predicate index {k.tolist()} out of range 0..{n_p - 1}")


def _row_masks(cols: np.ndarray, n_p: int) -> np.ndarray:
    mask = np.zeros((len(cols), n_p), dtype=bool)
    mask[np.arange(len(cols)), cols] = True
    return mask


def mask_and_normalize(v, k) -> Tensor:
    """Softmax over every position but ``k``; position ``k`` is exactly 0.

    ``v`` may be a vector (``k`` an int) or a row batch (``k`` one index per row).
    """
    v = as_tensor(v)
    n_p = v.shape[-1]
    _check_index(k, n_p)
    if v.values.ndim == 1:
        mask = np.zeros(n_p, dtype=bool)
        mask[int(k)] = True
        return reshape(masked_softmax(reshape(v, (1, n_p)), mask[None, :]), (n_p,))
    return masked_softmax(v, _row_masks(np.asarray(k, dtype=np.int64), n_p))


def target_loss(p: Tensor, q) -> Tensor:
    """BCE(p, q); every sample needs at least one positive label."""
    qv = np.asarray(q.values if isinstance(q, Tensor) else q, dtype=np.float64)
    if np.any(qv.reshape(-1, qv.shape[-1]).sum(axis=-1) == 0):
        raise ValueError("target_loss: a sample has no positive label")
    return bce_loss(p, qv)


def ground_truth_pairs(q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(sample, class) index pairs of every positive label, in row-major order."""
    rows, cols = np.nonzero(np.asarray(q) > 0)
    return rows.astype(np.int64), cols.astype(np.int64)


def batch_correlation_loss(M: CorrelationMatrix, p_raw: Tensor, q: np.ndarray) -> Tensor:
    """sum over ground-truth pairs (b, k) of KL(m^k_non || p_non(b)), divided by batch size.

    Only M receives gradient.
    """
    if M.n_p == 1:
        # a lone predicate has no non-target positions
        return Tensor(0.0)
    rows, cols = ground_truth_pairs(q)
    m_non = masked_softmax(take_rows(M.scores, cols), _row_masks(cols, M.n_p))
    p_non = detach(masked_softmax(take_rows(detach(p_raw), rows), _row_masks(cols, M.n_p)))
    return scale(kl_divergence(m_non, p_non, reduction="sum"), 1.0 / len(q))


def batch_transfer_loss(M: CorrelationMatrix, p_raw: Tensor, q: np.ndarray, headers: np.ndarray) -> Tensor:
    """sum over ground-truth pairs (b, k) with a header h of KL(p_non(b) || m^h_non), divided by batch size.

    Both sides are masked at k. Only the model receives gradient; pairs whose
    class heads its own pattern group contribute nothing.
    """
    if M.n_p == 1:
        return Tensor(0.0)
    rows, cols = ground_truth_pairs(q)
    heads = headers[cols]
    keep = heads >= 0
    if not np.any(keep):
        return Tensor(0.0)
    rows, cols, heads = rows[keep], cols[keep], heads[keep]
    mask = _row_masks(cols, M.n_p)
    p_non = masked_softmax(take_rows(p_raw, rows), mask)
    m_non = masked_softmax(Tensor(M.values[heads]), mask)
    return scale(kl_divergence(p_non, m_non, reduction="sum"), 1.0 / len(q))


def correlation_update_loss(M: CorrelationMatrix, k: int, p: Tensor) -> Tensor:
    """L_cm for one sample: KL(mask_and_normalize(M[k], k) || mask_and_normalize(detach(logit p), k))."""
    p = as_tensor(p)
    _check_index(k, M.n_p)
    q = np.zeros((1, M.n_p))
    q[0, k] = 1.0
    return batch_correlation_loss(M, logit(reshape(p, (1, M.n_p))), q)


def knowledge_transfer_loss(M: CorrelationMatrix, k: int, p: Tensor, vocab: PredicateVocabulary) -> Tensor:
    """L_nt for one sample, zero when ``k`` has no header predicate."""
    p = as_tensor(p)
    _check_index(k, M.n_p)
    q = np.zeros((1, M.n_p))
    q[0, k] = 1.0
    return batch_transfer_loss(M, logit(reshape(p, (1, M.n_p))), q, vocab.headers())


def alpha_at(cfg: KDLConfig, iteration: int, epoch: int) -> float:
    """alpha0 during warm-up, then alpha0 + beta * i with i the global iteration."""
    if epoch < cfg.warmup_epochs:
        return cfg.alpha0
    return cfg.alpha0 + cfg.beta * iteration


def gamma(epoch: int, cfg: KDLConfig) -> float:
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return cfg.gamma_base ** epoch


def kdl_total(M: CorrelationMatrix, p: Tensor, q: np.ndarray, vocab: PredicateVocabulary,
              cfg: KDLConfig, iteration: int, epoch: int, headers: np.ndarray | None = None) -> KDLLoss:
    """L_t + L_cm + alpha * L_nt for a batch of predicate probabilities ``p``."""
    p = as_tensor(p)
    q = np.asarray(q, dtype=np.float64)
    if headers is None:
        headers = vocab.headers()
    alpha = alpha_at(cfg, iteration, epoch)
    l_t = target_loss(p, q)
    p_raw = logit(p)
    l_cm = batch_correlation_loss(M, p_raw, q)
    l_nt = batch_transfer_loss(M, p_raw, q, headers)
    return KDLLoss(add(add(l_t, l_cm), scale(l_nt, alpha)), l_t, l_cm, l_nt, alpha)
