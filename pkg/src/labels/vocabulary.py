"""Predicate vocabulary and its decomposition into actional and spatial patterns."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

NO_PATTERN = "-"


@dataclass(frozen=True)
class Predicate:
    """One predicate and the pattern ids it decomposes into (None = absent)."""

    name: str
    actional: int | None = None
    spatial: int | None = None

    @property
    def is_dual(self) -> bool:
        return self.actional is not None and self.spatial is not None

    def shares_pattern(self, other: Predicate) -> bool:
        return (self.actional is not None and self.actional == other.actional) or (
            self.spatial is not None and self.spatial == other.spatial
        )


@dataclass
class PredicateVocabulary:
    """Predicates, the two pattern name lists and per-predicate training counts."""

    predicates: list[Predicate]
    actional_patterns: list[str]
    spatial_patterns: list[str]
    train_frequency: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.train_frequency:
            self.train_frequency = [0] * len(self.predicates)

    @property
    def n_p(self) -> int:
        return len(self.predicates)

    @property
    def n_a(self) -> int:
        return len(self.actional_patterns)

    @property
    def n_s(self) -> int:
        return len(self.spatial_patterns)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.predicates]

    def index_of(self, name: str) -> int:
        for i, p in enumerate(self.predicates):
            if p.name == name:
                return i
        raise KeyError(f"Unknown predicate: {name}")

    def problems(self) -> list[str]:
        """Return every invariant violation (empty if valid)."""
        errors = []
        if not self.predicates:
            errors.append("Vocabulary has no predicates")
        seen: set[str] = set()
        for p in self.predicates:
            if p.name in seen:
                errors.append(f"Duplicate predicate name: {p.name}")
            seen.add(p.name)
            if p.actional is None and p.spatial is None:
                errors.append(f"Predicate '{p.name}' has neither an actional nor a spatial pattern")
            if p.actional is not None and not 0 <= p.actional < self.n_a:
                errors.append(f"Predicate '{p.name}' has actional id {p.actional} outside 0..{self.n_a - 1}")
            if p.spatial is not None and not 0 <= p.spatial < self.n_s:
                errors.append(f"Predicate '{p.name}' has spatial id {p.spatial} outside 0..{self.n_s - 1}")
        for kind, names in (("actional", self.actional_patterns), ("spatial", self.spatial_patterns)):
            if len(set(names)) != len(names):
                errors.append(f"Duplicate {kind} pattern name")
            used = {getattr(p, kind) for p in self.predicates}
            for i, name in enumerate(names):
                if i not in used:
                    errors.append(f"{kind.capitalize()} pattern '{name}' is used by no predicate")
        if len(self.train_frequency) != len(self.predicates):
            errors.append(
                f"train_frequency has {len(self.train_frequency)} entries for {len(self.predicates)} predicates"
            )
        elif any(c < 0 for c in self.train_frequency):
            errors.append("train_frequency entries must be >= 0")
        return errors

    def validate(self):
        """Raise ValueError listing every invariant violation."""
        errors = self.problems()
        if errors:
            raise ValueError("Invalid vocabulary:\n  " + "\n  ".join(errors))

    def with_frequencies(self, counts) -> PredicateVocabulary:
        counts = [int(c) for c in counts]
        if len(counts) != self.n_p:
            raise ValueError(f"Expected {self.n_p} frequencies, got {len(counts)}")
        return replace(self, train_frequency=counts)

    def header_for(self, k: int) -> int | None:
        """Most frequent other predicate sharing a pattern with ``k``, if strictly more frequent.

        Ties go to the lowest index. None when no predicate shares a pattern with
        ``k`` or when ``k`` already heads every group it belongs to.
        """
        if not 0 <= k < self.n_p:
            raise IndexError(f"Predicate index {k} out of range 0..{self.n_p - 1}")
        target = self.predicates[k]
        best: int | None = None
        for j, other in enumerate(self.predicates):
            if j == k or not target.shares_pattern(other):
                continue
            if best is None or self.train_frequency[j] > self.train_frequency[best]:
                best = j
        if best is None or self.train_frequency[best] <= self.train_frequency[k]:
            return None
        return best

    def headers(self) -> np.ndarray:
        """header_for every predicate, -1 where there is none."""
        return np.array([-1 if (h := self.header_for(k)) is None else h for k in range(self.n_p)], dtype=np.int64)


def parse_vocabulary(text: str) -> PredicateVocabulary:
    """Parse ``name<TAB>actional|-<TAB>spatial|-<TAB>train_count`` lines.

    Pattern lists are ordered by first appearance. ``#`` lines and blank lines
    are skipped.
    """
    predicates: list[Predicate] = []
    actional: list[str] = []
    spatial: list[str] = []
    counts: list[int] = []

    def pattern_id(name: str, pool: list[str]) -> int | None:
        if name == NO_PATTERN:
            return None
        if name not in pool:
            pool.append(name)
        return pool.index(name)

    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.rstrip("\n").split("\t")
        if len(fields) != 4:
            raise ValueError(f"Vocabulary line {lineno}: expected 4 tab-separated fields, got {len(fields)}")
        name, a_name, s_name, count = (f.strip() for f in fields)
        try:
            counts.append(int(count))
        except ValueError:
            raise ValueError(f"Vocabulary line {lineno}: train count {count!r} is not an integer") from None
        predicates.append(Predicate(name, pattern_id(a_name, actional), pattern_id(s_name, spatial)))

    vocab = PredicateVocabulary(predicates, actional, spatial, counts)
    vocab.validate()
    return vocab


def format_vocabulary(vocab: PredicateVocabulary) -> str:
    lines = ["# name\tactional\tspatial\ttrain_count"]
    for p, count in zip(vocab.predicates, vocab.train_frequency):
        a = vocab.actional_patterns[p.actional] if p.actional is not None else NO_PATTERN
        s = vocab.spatial_patterns[p.spatial] if p.spatial is not None else NO_PATTERN
        lines.append(f"{p.name}\t{a}\t{s}\t{count}")
    return "\n".join(lines) + "\n"


def load_vocabulary(path: str | Path) -> PredicateVocabulary:
    vocab = parse_vocabulary(Path(path).read_text(encoding="utf-8"))
    logger.info(f"Vocabulary loaded: {path} ({vocab.n_p} predicates, {vocab.n_a} actional, {vocab.n_s} spatial)")
    return vocab


def save_vocabulary(vocab: PredicateVocabulary, path: str | Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_vocabulary(vocab), encoding="utf-8")
    logger.info(f"Vocabulary saved: {path}")
