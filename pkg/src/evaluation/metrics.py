"""Ranking metrics for per-segment predicate prediction.

Every metric ranks a segment's predicate scores in descending order with ties
broken by the lower predicate index, so reports are reproducible bit-for-bit.
``truths`` maps a segment id to its ground-truth predicate indices.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

logger = logging.getLogger(__name__)


@dataclass
class RankedPrediction:
    segment_id: str
    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if not np.all(np.isfinite(self.scores)):
            raise ValueError(f"Prediction for '{self.segment_id}' has non-finite scores")

    def ranking(self) -> np.ndarray:
        return np.argsort(-self.scores, kind="stable")

    def top_k(self, k: int) -> np.ndarray:
        return self.ranking()[:k]


def _check_k(k: int):
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")


def _paired(preds: list[RankedPrediction], truths: Mapping[str, Iterable[int]]):
    by_id = {p.segment_id: p for p in preds}
    missing = [sid for sid in truths if sid not in by_id]
    if missing:
        raise ValueError(f"No prediction for {len(missing)} segment(s), first: '{missing[0]}'")
    return [(by_id[sid], set(int(k) for k in labels)) for sid, labels in truths.items()]


def recall_at_k(preds: list[RankedPrediction], truths: Mapping[str, Iterable[int]], k: int) -> float:
    """Fraction of (segment, true predicate) pairs retrieved in the segment's top-K."""
    _check_k(k)
    hits = total = 0
    for pred, labels in _paired(preds, truths):
        hits += len(labels & set(pred.top_k(k).tolist()))
        total += len(labels)
    if total == 0:
        raise ValueError("recall_at_k: no ground-truth labels")
    return hits / total


def per_class_recall(preds: list[RankedPrediction], truths: Mapping[str, Iterable[int]], k: int,
                     n_predicates: int) -> np.ndarray:
    """Recall@K of every class; NaN for classes with no ground truth."""
    _check_k(k)
    hits = np.zeros(n_predicates)
    support = np.zeros(n_predicates)
    for pred, labels in _paired(preds, truths):
        top = set(pred.top_k(k).tolist())
        for c in labels:
            support[c] += 1
            hits[c] += c in top
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(support > 0, hits / np.maximum(support, 1), np.nan)


def mean_recall_at_k(preds: list[RankedPrediction], truths: Mapping[str, Iterable[int]], k: int,
                     n_predicates: int | None = None, classes: Iterable[int] | None = None) -> float:
    """Unweighted mean of per-class recall@K over classes that have ground truth.

    ``classes`` restricts the average to a subset (head or tail classes).
    """
    if n_predicates is None:
        n_predicates = max(len(p.scores) for p in preds)
    recalls = per_class_recall(preds, truths, k, n_predicates)
    if classes is not None:
        recalls = recalls[sorted(classes)]
    present = recalls[~np.isnan(recalls)]
    if present.size == 0:
        raise ValueError("mean_recall_at_k: no class has any ground truth")
    return float(present.mean())


def precision_at_k(preds: list[RankedPrediction], truths: Mapping[str, Iterable[int]], k: int) -> float:
    """Mean over segments of |top-K ∩ truths| / K."""
    _check_k(k)
    pairs = _paired(preds, truths)
    if not pairs:
        raise ValueError("precision_at_k: no segments")
    return float(np.mean([len(labels & set(pred.top_k(k).tolist())) / k for pred, labels in pairs]))


def mean_metric(r50: float, r100: float, mr50: float, mr100: float) -> float:
    return (r50 + r100 + mr50 + mr100) / 4.0


def average_precision(scores: np.ndarray, positives: np.ndarray) -> float:
    """Mean of precision at the rank of each positive; segments tie-broken by order."""
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    hits = np.asarray(positives, dtype=bool)[order]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, len(ranks) + 1) / ranks))


def macro_ap(preds: list[RankedPrediction], truths: Mapping[str, Iterable[int]]) -> float:
    """Mean per-class AP over classes with at least one positive.

    A label-ranking surrogate, not the detection mAP over tracklet matches.
    """
    pairs = _paired(preds, truths)
    if not pairs:
        raise ValueError("macro_ap: no segments")
    scores = np.stack([pred.scores for pred, _ in pairs])
    truth = np.zeros_like(scores, dtype=bool)
    for i, (_, labels) in enumerate(pairs):
        truth[i, list(labels)] = True
    aps = [average_precision(scores[:, c], truth[:, c]) for c in range(scores.shape[1]) if truth[:, c].any()]
    if not aps:
        raise ValueError("macro_ap: no class has any positive")
    return float(np.mean(aps))


def mean_ks(k_list: list[int]) -> tuple[int, int]:
    """The two largest K values feeding the Mean column (the only K twice if just one)."""
    ks = sorted(set(k_list))
    return (ks[-1], ks[-1]) if len(ks) == 1 else (ks[-2], ks[-1])


@dataclass
class MetricsReport:
    k_list: list[int]
    recall: dict[int, float]
    mean_recall: dict[int, float]
    precision: dict[int, float]
    mean: float
    macro_ap: float
    per_class: dict[int, np.ndarray]
    head_mean_recall: dict[int, float] = field(default_factory=dict)
    tail_mean_recall: dict[int, float] = field(default_factory=dict)

    def rows(self) -> list[tuple[str, int | None, float]]:
        """(metric, K, value) triples in a fixed order."""
        out: list[tuple[str, int | None, float]] = []
        for k in self.k_list:
            out.append(("R", k, self.recall[k]))
            out.append(("mR", k, self.mean_recall[k]))
            out.append(("P", k, self.precision[k]))
            if k in self.head_mean_recall:
                out.append(("mR_head", k, self.head_mean_recall[k]))
            if k in self.tail_mean_recall:
                out.append(("mR_tail", k, self.tail_mean_recall[k]))
        out.append(("Mean", None, self.mean))
        out.append(("mAP", None, self.macro_ap))
        return out


def build_report(preds: list[RankedPrediction], truths: Mapping[str, Iterable[int]], n_predicates: int,
                 k_list: list[int], head: set[int] | None = None, tail: set[int] | None = None) -> MetricsReport:
    k_list = sorted(set(k_list))
    support = np.zeros(n_predicates, dtype=bool)
    for labels in truths.values():
        support[list(labels)] = True
    if not support.all():
        logger.warning(f"{int((~support).sum())} class(es) without test positives excluded from mR@K and mAP")

    recall, mean_recall, precision, per_class = {}, {}, {}, {}
    head_mr, tail_mr = {}, {}
    for k in k_list:
        per_class[k] = per_class_recall(preds, truths, k, n_predicates)
        recall[k] = recall_at_k(preds, truths, k)
        mean_recall[k] = float(np.nanmean(per_class[k]))
        precision[k] = precision_at_k(preds, truths, k)
        for classes, target in ((head, head_mr), (tail, tail_mr)):
            if classes and not np.all(np.isnan(per_class[k][sorted(classes)])):
                target[k] = float(np.nanmean(per_class[k][sorted(classes)]))

    lo, hi = mean_ks(k_list)
    mean = mean_metric(recall[lo], recall[hi], mean_recall[lo], mean_recall[hi])
    return MetricsReport(k_list, recall, mean_recall, precision, mean, macro_ap(preds, truths), per_class,
                         head_mr, tail_mr)
