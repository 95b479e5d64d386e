"""Map (patterns -> predicates) and Map^-1 (predicates -> patterns).

Map averages the actional and spatial score of a dual-pattern predicate and
passes the sole score through for a single-pattern one. Map^-1 gives each
pattern the mean score of the predicates that contain it. Both are linear, so
each is also available as a fixed matrix for use inside the autodiff graph.
Pattern targets follow from predicate targets the same way.
"""

from __future__ import annotations

import numpy as np

from src.autodiff.ops import add, matmul
from src.autodiff.tensor import Tensor
from src.labels.vocabulary import PredicateVocabulary


def _pattern_columns(vocab: PredicateVocabulary) -> tuple[np.ndarray, np.ndarray]:
    a = np.array([-1 if p.actional is None else p.actional for p in vocab.predicates], dtype=np.int64)
    s = np.array([-1 if p.spatial is None else p.spatial for p in vocab.predicates], dtype=np.int64)
    return a, s


def map_to_predicates(p_a: np.ndarray, p_s: np.ndarray, vocab: PredicateVocabulary) -> np.ndarray:
    """Predicate scores from pattern scores; works on single vectors or row batches."""
    p_a, p_s = np.asarray(p_a, dtype=np.float64), np.asarray(p_s, dtype=np.float64)
    if p_a.shape[-1] != vocab.n_a or p_s.shape[-1] != vocab.n_s:
        raise ValueError(
            f"map_to_predicates: got {p_a.shape[-1]} actional / {p_s.shape[-1]} spatial scores, "
            f"vocabulary has {vocab.n_a} / {vocab.n_s}"
        )
    a, s = _pattern_columns(vocab)
    out = np.empty(p_a.shape[:-1] + (vocab.n_p,))
    dual = (a >= 0) & (s >= 0)
    only_a = (a >= 0) & (s < 0)
    only_s = (a < 0) & (s >= 0)
    out[..., dual] = (p_a[..., a[dual]] + p_s[..., s[dual]]) / 2.0
    out[..., only_a] = p_a[..., a[only_a]]
    out[..., only_s] = p_s[..., s[only_s]]
    return out


def map_to_patterns(p: np.ndarray, vocab: PredicateVocabulary) -> tuple[np.ndarray, np.ndarray]:
    """Per-pattern mean of the scores of predicates containing that pattern."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] != vocab.n_p:
        raise ValueError(f"map_to_patterns: got {p.shape[-1]} predicate scores, vocabulary has {vocab.n_p}")
    a, s = _pattern_columns(vocab)
    p_a = np.empty(p.shape[:-1] + (vocab.n_a,))
    p_s = np.empty(p.shape[:-1] + (vocab.n_s,))
    for c in range(vocab.n_a):
        p_a[..., c] = p[..., a == c].mean(axis=-1)
    for c in range(vocab.n_s):
        p_s[..., c] = p[..., s == c].mean(axis=-1)
    return p_a, p_s


def pattern_labels(q: np.ndarray, vocab: PredicateVocabulary) -> tuple[np.ndarray, np.ndarray]:
    """Multi-hot actional and spatial targets: a pattern is on when a positive predicate contains it."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1] != vocab.n_p:
        raise ValueError(f"pattern_labels: got {q.shape[-1]} predicate labels, vocabulary has {vocab.n_p}")
    a, s = _pattern_columns(vocab)
    on = q > 0
    q_a = np.zeros(q.shape[:-1] + (vocab.n_a,))
    q_s = np.zeros(q.shape[:-1] + (vocab.n_s,))
    for c in range(vocab.n_a):
        q_a[..., c] = on[..., a == c].any(axis=-1)
    for c in range(vocab.n_s):
        q_s[..., c] = on[..., s == c].any(axis=-1)
    return q_a, q_s


class PatternMap:
    """Matrix form of Map and Map^-1 for one vocabulary.

    ``predicates(p_a, p_s) = p_a @ to_pred_a + p_s @ to_pred_s`` and
    ``patterns(p) = (p @ to_actional, p @ to_spatial)``.
    """

    def __init__(self, vocab: PredicateVocabulary):
        self.vocab = vocab
        a, s = _pattern_columns(vocab)
        n_a, n_s, n_p = vocab.n_a, vocab.n_s, vocab.n_p

        self.to_pred_a = np.zeros((n_a, n_p))
        self.to_pred_s = np.zeros((n_s, n_p))
        for j in range(n_p):
            weight = 0.5 if a[j] >= 0 and s[j] >= 0 else 1.0
            if a[j] >= 0:
                self.to_pred_a[a[j], j] = weight
            if s[j] >= 0:
                self.to_pred_s[s[j], j] = weight

        self.to_actional = np.zeros((n_p, n_a))
        self.to_spatial = np.zeros((n_p, n_s))
        for c in range(n_a):
            members = a == c
            self.to_actional[members, c] = 1.0 / members.sum()
        for c in range(n_s):
            members = s == c
            self.to_spatial[members, c] = 1.0 / members.sum()

        self._to_pred_a = Tensor(self.to_pred_a)
        self._to_pred_s = Tensor(self.to_pred_s)
        self._to_actional = Tensor(self.to_actional)
        self._to_spatial = Tensor(self.to_spatial)

    def predicates(self, p_a: Tensor, p_s: Tensor) -> Tensor:
        return add(matmul(p_a, self._to_pred_a), matmul(p_s, self._to_pred_s))

    def patterns(self, p: Tensor) -> tuple[Tensor, Tensor]:
        return matmul(p, self._to_actional), matmul(p, self._to_spatial)
