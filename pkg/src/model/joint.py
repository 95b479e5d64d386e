"""Undecoupled predicate classifier: one encoder and a single n_p-way head.

Used for the baseline and the KDL-only runs. The encoder has the decoupler
architecture so parameter counts stay comparable to the PDL model.
"""

from __future__ import annotations

import numpy as np

from src.autodiff.ops import sigmoid
from src.autodiff.parameters import ParameterSet
from src.autodiff.tensor import Tensor, as_tensor
from src.labels.vocabulary import PredicateVocabulary
from src.model.pdl import init_mlp, predict, run_mlp


class JointModel:
    update_groups = ("E", "C")

    def __init__(self, params: ParameterSet, vocab: PredicateVocabulary, feature_dim: int, hidden_dim: int):
        self.params = params
        self.vocab = vocab
        self.feature_dim = feature_dim
        self.hidden_dim = hidden_dim

    @classmethod
    def build(cls, vocab: PredicateVocabulary, feature_dim: int = 64, hidden_dim: int = 64,
              seed: int = 0) -> JointModel:
        rng = np.random.default_rng(seed)
        params = ParameterSet()
        init_mlp(params, "E", [feature_dim, hidden_dim, hidden_dim], rng)
        init_mlp(params, "C", [hidden_dim, vocab.n_p], rng)
        return cls(params, vocab, feature_dim, hidden_dim)

    def predicate_probabilities(self, f_v) -> Tensor:
        f_v = as_tensor(f_v)
        if f_v.values.ndim != 2 or f_v.shape[1] != self.feature_dim:
            raise ValueError(f"Joint forward: expected features of shape (B, {self.feature_dim}), got {f_v.shape}")
        return sigmoid(run_mlp(self.params, "C", run_mlp(self.params, "E", f_v)))

    def predict(self, f_v) -> np.ndarray:
        return predict(self, f_v)
