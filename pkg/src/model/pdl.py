"""Pattern-level label decoupling.

Two decouplers split the segment feature f_v into an actional feature f_a and
a spatial feature f_s; classifier A scores actional patterns from f_a and S
scores spatial patterns from f_s. Two adversary networks try to recover the
opposite pattern from each decoupled feature. A gradient reversal layer sits
between decoupler and adversary, so one backward pass trains the adversaries
to recover the opposite pattern and the decouplers to hide it. The A and S
heads are also supervised directly with pattern targets derived from the
predicate labels.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from src.autodiff.ops import (
    GradScale,
    add,
    affine,
    bce_loss,
    detach,
    gradient_reversal,
    kl_divergence,
    relu,
    scale,
    sigmoid,
    softmax,
    total,
)
from src.autodiff.parameters import ParameterSet
from src.autodiff.tensor import Tensor, active_tape, as_tensor
from src.labels.mapping import PatternMap, pattern_labels
from src.labels.vocabulary import PredicateVocabulary

logger = logging.getLogger(__name__)

DECOUPLERS = ("D_a", "D_s")
ADVERSARIES = ("N_a2s", "N_s2a")
CLASSIFIERS = ("A", "S")


@dataclass
class PDLConfig:
    """GRL scale, mutual-calibration mixing weight and step count, pattern BCE weight."""

    grl_lambda: float = 0.13
    eta: float = 1e-2
    mc_steps: int = 1
    adversarial: bool = True
    pattern_weight: float = 1.0

    def validate(self) -> list[str]:
        errors = []
        if not self.grl_lambda >= 0.0:
            errors.append(f"grl_lambda must be >= 0, got {self.grl_lambda}")
        if not 0.0 <= self.eta <= 1.0:
            errors.append(f"eta must be in [0, 1], got {self.eta}")
        if self.mc_steps < 0:
            errors.append(f"mc_steps must be >= 0, got {self.mc_steps}")
        if not self.pattern_weight >= 0.0:
            errors.append(f"pattern_weight must be >= 0, got {self.pattern_weight}")
        return errors


@dataclass
class PDLOutput:
    f_a: Tensor
    f_s: Tensor
    raw_a: Tensor
    raw_s: Tensor
    p_a: Tensor
    p_s: Tensor


def init_mlp(params: ParameterSet, group: str, sizes: list[int], rng: np.random.Generator):
    """Add affine layers ``sizes[0] -> sizes[1] -> ...`` under ``group``.

    Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
    """
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:]), start=1):
        bound = 1.0 / np.sqrt(fan_in)
        params.add(f"{group}.W{i}", rng.uniform(-bound, bound, size=(fan_in, fan_out)), group)
        params.add(f"{group}.b{i}", np.zeros(fan_out), group)


def run_mlp(params: ParameterSet, group: str, x: Tensor) -> Tensor:
    """affine -> ReLU -> affine -> ... with no activation after the last layer."""
    n_layers = sum(1 for name in params.names([group]) if ".W" in name)
    for i in range(1, n_layers + 1):
        x = affine(x, params[f"{group}.W{i}"], params[f"{group}.b{i}"])
        if i < n_layers:
            x = relu(x)
    return x


class PDLModel:
    """Decouplers D_a/D_s, adversaries N_a2s/N_s2a and classifiers A/S in one ParameterSet."""

    update_groups = ("D_a", "D_s", "A", "S")

    def __init__(self, params: ParameterSet, vocab: PredicateVocabulary, cfg: PDLConfig,
                 feature_dim: int, hidden_dim: int):
        self.params = params
        self.vocab = vocab
        self.cfg = cfg
        self.feature_dim = feature_dim
        self.hidden_dim = hidden_dim
        self.pattern_map = PatternMap(vocab)

    @classmethod
    def build(cls, vocab: PredicateVocabulary, cfg: PDLConfig | None = None,
              feature_dim: int = 64, hidden_dim: int = 64, seed: int = 0) -> PDLModel:
        cfg = cfg or PDLConfig()
        rng = np.random.default_rng(seed)
        params = ParameterSet()
        h = hidden_dim
        init_mlp(params, "D_a", [feature_dim, h, h], rng)
        init_mlp(params, "D_s", [feature_dim, h, h], rng)
        init_mlp(params, "A", [h, vocab.n_a], rng)
        init_mlp(params, "S", [h, vocab.n_s], rng)
        # adversaries come last so the inference path draws the same init with or without them
        if cfg.adversarial:
            init_mlp(params, "N_a2s", [h, h, h], rng)
            init_mlp(params, "N_s2a", [h, h, h], rng)
        logger.debug(f"PDL model built: d={feature_dim}, h={h}, n_a={vocab.n_a}, n_s={vocab.n_s}")
        return cls(params, vocab, cfg, feature_dim, hidden_dim)

    @property
    def has_adversaries(self) -> bool:
        return all(g in self.params.groups for g in ADVERSARIES)

    def forward(self, f_v) -> PDLOutput:
        f_v = as_tensor(f_v)
        if f_v.values.ndim != 2 or f_v.shape[1] != self.feature_dim:
            raise ValueError(f"PDL forward: expected features of shape (B, {self.feature_dim}), got {f_v.shape}")
        f_a = run_mlp(self.params, "D_a", f_v)
        f_s = run_mlp(self.params, "D_s", f_v)
        raw_a = run_mlp(self.params, "A", f_a)
        raw_s = run_mlp(self.params, "S", f_s)
        return PDLOutput(f_a, f_s, raw_a, raw_s, sigmoid(raw_a), sigmoid(raw_s))

    def predicate_probabilities(self, f_v) -> Tensor:
        """forward -> mutual calibration -> Map, as a differentiable tensor."""
        return self.predicates_from(self.forward(f_v))

    def predicates_from(self, out: PDLOutput) -> Tensor:
        p_a, p_s = mutual_calibrate(out.p_a, out.p_s, self.pattern_map, self.cfg)
        return self.pattern_map.predicates(p_a, p_s)

    def predict(self, f_v) -> np.ndarray:
        return predict(self, f_v)


def forward(model: PDLModel, f_v) -> PDLOutput:
    return model.forward(f_v)


def adversarial_loss(model: PDLModel, f_a: Tensor, f_s: Tensor, raw_a: Tensor, raw_s: Tensor,
                     cfg: PDLConfig) -> Tensor:
    """KL(S(N_a2s(R(f_a))) || S(f_s)) + KL(A(N_s2a(R(f_s))) || A(f_a)), batch-averaged.

    ``raw_a``/``raw_s`` are the classifier scores on the decoupled features; they
    serve as gradient-blocked targets. Scores become distributions by softmax.
    Adversaries and classifiers on the adversary path receive the descent direction;
    the decouplers receive it reversed and scaled by ``cfg.grl_lambda``.
    """
    if not model.has_adversaries:
        raise ValueError("adversarial_loss: model was built without adversary networks")
    grl = GradScale(cfg.grl_lambda)
    f_a2s = run_mlp(model.params, "N_a2s", gradient_reversal(f_a, grl))
    f_s2a = run_mlp(model.params, "N_s2a", gradient_reversal(f_s, grl))
    raw_a2s = run_mlp(model.params, "S", f_a2s)
    raw_s2a = run_mlp(model.params, "A", f_s2a)
    a2s = kl_divergence(softmax(raw_a2s), detach(softmax(raw_s)))
    s2a = kl_divergence(softmax(raw_s2a), detach(softmax(raw_a)))
    return add(a2s, s2a)


def pattern_loss(model: PDLModel, out: PDLOutput, q) -> Tensor:
    """BCE of the uncalibrated A and S scores against the pattern targets implied by ``q``.

    A pattern is a positive target when any positive predicate contains it.
    A side with no patterns contributes nothing.
    """
    q_a, q_s = pattern_labels(q, model.vocab)
    terms = [bce_loss(p, target) for p, target in ((out.p_a, q_a), (out.p_s, q_s)) if target.shape[-1] > 0]
    return total(*terms)


def mutual_calibrate(p_a: Tensor, p_s: Tensor, pattern_map: PatternMap | PredicateVocabulary,
                     cfg: PDLConfig) -> tuple[Tensor, Tensor]:
    """Mix pattern scores with their Map^-1(Map(.)) projection ``cfg.mc_steps`` times."""
    if isinstance(pattern_map, PredicateVocabulary):
        pattern_map = PatternMap(pattern_map)
    p_a, p_s = as_tensor(p_a), as_tensor(p_s)
    if cfg.eta == 1.0:
        return p_a, p_s
    for _ in range(cfg.mc_steps):
        back_a, back_s = pattern_map.patterns(pattern_map.predicates(p_a, p_s))
        p_a = add(scale(p_a, cfg.eta), scale(back_a, 1.0 - cfg.eta))
        p_s = add(scale(p_s, cfg.eta), scale(back_s, 1.0 - cfg.eta))
    return p_a, p_s


def predict(model, f_v) -> np.ndarray:
    """Predicate probabilities (B, n_p) without recording a tape."""
    if active_tape() is not None:
        raise RuntimeError("predict must not run inside an active tape")
    return model.predicate_probabilities(f_v).values
