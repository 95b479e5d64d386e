"""Segment records and their JSONL file format.

One JSON object per line: ``{"id": str, "features": [float, ...], "labels": [int, ...]}``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from src.labels.vocabulary import PredicateVocabulary

logger = logging.getLogger(__name__)


@dataclass
class SegmentRecord:
    """One video segment: its feature vector and ground-truth predicate indices."""

    id: str
    features: np.ndarray
    labels: tuple[int, ...]

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = tuple(sorted({int(k) for k in self.labels}))

    def validate(self, n_predicates: int | None = None) -> list[str]:
        errors = []
        if not self.labels:
            errors.append(f"Record '{self.id}' has no labels")
        if self.labels and self.labels[0] < 0:
            errors.append(f"Record '{self.id}' has negative label {self.labels[0]}")
        if n_predicates is not None and self.labels and self.labels[-1] >= n_predicates:
            errors.append(f"Record '{self.id}' has label {self.labels[-1]} >= n_p={n_predicates}")
        if self.features.ndim != 1:
            errors.append(f"Record '{self.id}' features must be a vector, got shape {self.features.shape}")
        elif not np.all(np.isfinite(self.features)):
            errors.append(f"Record '{self.id}' has non-finite features")
        return errors

    def multi_hot(self, n_predicates: int) -> np.ndarray:
        q = np.zeros(n_predicates)
        q[list(self.labels)] = 1.0
        return q

    def to_dict(self) -> dict:
        return {"id": self.id, "features": self.features.tolist(), "labels": list(self.labels)}

    @classmethod
    def from_dict(cls, data: dict) -> SegmentRecord:
        return cls(id=str(data["id"]), features=data["features"], labels=data["labels"])


def load(path: str | Path, n_predicates: int | None = None) -> list[SegmentRecord]:
    """Read a JSONL file; every malformed line raises ValueError with its 1-based number."""
    path = Path(path)
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = SegmentRecord.from_dict(json.loads(line))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise ValueError(f"{path}: line {lineno}: malformed record ({e})") from None
        errors = record.validate(n_predicates)
        if errors:
            raise ValueError(f"{path}: line {lineno}: " + "; ".join(errors))
        records.append(record)
    logger.info(f"Loaded {len(records)} records from {path}")
    return records


def save(records: list[SegmentRecord], path: str | Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(r.to_dict()) for r in records]
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    logger.info(f"Saved {len(records)} records to {path}")


def to_arrays(records: list[SegmentRecord], n_predicates: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack records into a (N, d) feature matrix and an (N, n_p) multi-hot matrix."""
    if not records:
        raise ValueError("to_arrays: no records")
    features = np.stack([r.features for r in records])
    labels = np.stack([r.multi_hot(n_predicates) for r in records])
    return features, labels


def label_counts(records: list[SegmentRecord], n_predicates: int) -> np.ndarray:
    counts = np.zeros(n_predicates, dtype=np.int64)
    for r in records:
        counts[list(r.labels)] += 1
    return counts


def partition_by_frequency(counts, quantile: float) -> tuple[set[int], set[int]]:
    """Split classes into head and tail by cumulative frequency mass.

    Classes are visited by descending count, ties by ascending index; a class
    joins the head while the mass before it is below ``quantile`` of the total.
    """
    if not 0.0 < quantile < 1.0:
        raise ValueError(f"quantile must be in (0, 1), got {quantile}")
    counts = np.asarray(counts, dtype=np.int64)
    order = sorted(range(len(counts)), key=lambda k: (-counts[k], k))
    limit = quantile * counts.sum()
    head: set[int] = set()
    seen = 0
    for k in order:
        if seen >= limit:
            break
        head.add(k)
        seen += counts[k]
    return head, set(range(len(counts))) - head


def head_tail_partition(records: list[SegmentRecord], vocab: PredicateVocabulary,
                        quantile: float) -> tuple[set[int], set[int]]:
    return partition_by_frequency(label_counts(records, vocab.n_p), quantile)
