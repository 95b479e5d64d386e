"""Synthetic long-tailed, pattern-structured segment data.

Each record's latent state is a pair of binary pattern indicators (z_a, z_s).
A primary predicate is drawn from a Zipf law over the predicate table, its
patterns are switched on, and each remaining pattern is switched on with a
small extra probability. The labels are every predicate whose full pattern
set is on; the features are a fixed random linear mix of the indicators plus
Gaussian noise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from src.data.records import SegmentRecord, label_counts
from src.labels.vocabulary import Predicate, PredicateVocabulary

logger = logging.getLogger(__name__)


@dataclass
class SyntheticConfig:
    n_a: int = 8
    n_s: int = 6
    n_p: int = 30
    d: int = 64
    zipf_s: float = 1.5
    noise_sigma: float = 2.5
    n_train: int = 20000
    n_test: int = 4000
    seed: int = 0
    extra_pattern_prob: float = 0.02
    single_actional: int = 2
    single_spatial: int = 1
    table: PredicateVocabulary | None = field(default=None, repr=False)

    def validate(self) -> list[str]:
        errors = []
        if self.zipf_s < 0:
            errors.append(f"zipf_s must be >= 0, got {self.zipf_s}")
        if self.noise_sigma < 0:
            errors.append(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not 0.0 <= self.extra_pattern_prob <= 1.0:
            errors.append(f"extra_pattern_prob must be in [0, 1], got {self.extra_pattern_prob}")
        if self.d < 1:
            errors.append(f"d must be >= 1, got {self.d}")
        if self.n_train < 1 or self.n_test < 1:
            errors.append(f"n_train and n_test must be >= 1, got {self.n_train} / {self.n_test}")
        if self.table is not None:
            errors.extend(self.table.problems())
            return errors
        dual_a = self.n_a - self.single_actional
        dual_s = self.n_s - self.single_spatial
        n_dual = self.n_p - self.single_actional - self.single_spatial
        if self.single_actional < 0 or self.single_spatial < 0:
            errors.append("single_actional and single_spatial must be >= 0")
        elif dual_a < 1 or dual_s < 1:
            errors.append(
                f"Need at least one dual-capable pattern of each kind, got {dual_a} actional / {dual_s} spatial"
            )
        elif not max(dual_a, dual_s) <= n_dual <= dual_a * dual_s:
            errors.append(
                f"n_p={self.n_p} leaves {n_dual} dual predicates; a table over {dual_a} x {dual_s} "
                f"patterns needs between {max(dual_a, dual_s)} and {dual_a * dual_s}"
            )
        return errors


@dataclass
class SyntheticDataset:
    train: list[SegmentRecord]
    test: list[SegmentRecord]
    vocab: PredicateVocabulary
    # (z_a, z_s) per split, one row per record, for re-deriving labels
    latents: dict[str, tuple[np.ndarray, np.ndarray]]


def default_table(cfg: SyntheticConfig, rng: np.random.Generator) -> PredicateVocabulary:
    """Dual predicates over the leading patterns, single predicates over the trailing ones.

    The duals first walk a diagonal so every leading pattern is used, then the
    remaining slots are drawn without replacement from the unused combinations.
    """
    dual_a = cfg.n_a - cfg.single_actional
    dual_s = cfg.n_s - cfg.single_spatial
    n_dual = cfg.n_p - cfg.single_actional - cfg.single_spatial

    pairs = [(i % dual_a, i % dual_s) for i in range(max(dual_a, dual_s))]
    unused = [(a, s) for a in range(dual_a) for s in range(dual_s) if (a, s) not in pairs]
    picks = rng.choice(len(unused), size=n_dual - len(pairs), replace=False)
    pairs += [unused[i] for i in sorted(picks)]

    predicates = [Predicate(f"act{a}_spa{s}", a, s) for a, s in pairs]
    predicates += [Predicate(f"act{a}", a, None) for a in range(dual_a, cfg.n_a)]
    predicates += [Predicate(f"spa{s}", None, s) for s in range(dual_s, cfg.n_s)]
    return PredicateVocabulary(
        predicates,
        [f"act{a}" for a in range(cfg.n_a)],
        [f"spa{s}" for s in range(cfg.n_s)],
    )


def check_unambiguous(vocab: PredicateVocabulary):
    """Raise ValueError if two predicates decompose into the same pattern set."""
    seen: dict[tuple, list[str]] = {}
    for p in vocab.predicates:
        seen.setdefault((p.actional, p.spatial), []).append(p.name)
    collisions = [names for names in seen.values() if len(names) > 1]
    if collisions:
        listed = "; ".join(", ".join(names) for names in collisions)
        raise ValueError(f"Ambiguous predicate table, identical pattern sets: {listed}")


def zipf_weights(n: int, s: float, rng: np.random.Generator) -> np.ndarray:
    """Normalized rank^-s weights with ranks assigned to classes by a random permutation."""
    ranks = rng.permutation(n) + 1
    w = ranks.astype(np.float64) ** -s
    return w / w.sum()


def labels_from_patterns(z_a: np.ndarray, z_s: np.ndarray, vocab: PredicateVocabulary) -> np.ndarray:
    """(N, n_p) indicator of predicates whose every pattern is active."""
    z_a, z_s = np.asarray(z_a, dtype=bool), np.asarray(z_s, dtype=bool)
    out = np.ones((len(z_a), vocab.n_p), dtype=bool)
    for j, p in enumerate(vocab.predicates):
        if p.actional is not None:
            out[:, j] &= z_a[:, p.actional]
        if p.spatial is not None:
            out[:, j] &= z_s[:, p.spatial]
    return out


def _sample_split(n: int, prefix: str, vocab: PredicateVocabulary, weights: np.ndarray,
                  W_a: np.ndarray, W_s: np.ndarray, cfg: SyntheticConfig,
                  rng: np.random.Generator) -> tuple[list[SegmentRecord], np.ndarray, np.ndarray]:
    primary = rng.choice(vocab.n_p, size=n, p=weights)
    z_a = rng.random((n, vocab.n_a)) < cfg.extra_pattern_prob
    z_s = rng.random((n, vocab.n_s)) < cfg.extra_pattern_prob
    for i, k in enumerate(primary):
        p = vocab.predicates[k]
        if p.actional is not None:
            z_a[i, p.actional] = True
        if p.spatial is not None:
            z_s[i, p.spatial] = True
    features = z_a @ W_a + z_s @ W_s + cfg.noise_sigma * rng.standard_normal((n, W_a.shape[1]))
    labels = labels_from_patterns(z_a, z_s, vocab)
    records = [
        SegmentRecord(f"{prefix}-{i + 1:06d}", features[i], np.flatnonzero(labels[i]))
        for i in range(n)
    ]
    return records, z_a.astype(np.float64), z_s.astype(np.float64)


def generate_with_latents(cfg: SyntheticConfig) -> SyntheticDataset:
    errors = cfg.validate()
    if errors:
        raise ValueError("Invalid synthetic config:\n  " + "\n  ".join(errors))
    rng = np.random.default_rng(cfg.seed)
    vocab = cfg.table if cfg.table is not None else default_table(cfg, rng)
    check_unambiguous(vocab)

    weights = zipf_weights(vocab.n_p, cfg.zipf_s, rng)
    W_a = rng.standard_normal((vocab.n_a, cfg.d))
    W_s = rng.standard_normal((vocab.n_s, cfg.d))
    train, za_tr, zs_tr = _sample_split(cfg.n_train, "train", vocab, weights, W_a, W_s, cfg, rng)
    test, za_te, zs_te = _sample_split(cfg.n_test, "test", vocab, weights, W_a, W_s, cfg, rng)

    vocab = vocab.with_frequencies(label_counts(train, vocab.n_p))
    logger.info(
        f"Generated synthetic data: {len(train)} train / {len(test)} test, n_p={vocab.n_p}, "
        f"d={cfg.d}, zipf_s={cfg.zipf_s}"
    )
    return SyntheticDataset(train, test, vocab, {"train": (za_tr, zs_tr), "test": (za_te, zs_te)})


def generate(cfg: SyntheticConfig) -> tuple[list[SegmentRecord], list[SegmentRecord], PredicateVocabulary]:
    data = generate_with_latents(cfg)
    return data.train, data.test, data.vocab
