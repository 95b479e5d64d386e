"""CSV artifacts of a run: metrics, per-class recall, run log and correlation matrix."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import pandas as pd

from src.autodiff.tensor import EPS
from src.evaluation.metrics import MetricsReport
from src.labels.vocabulary import PredicateVocabulary

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["run", "mode", "metric", "K", "value"]


def metrics_frame(run: str, mode: str, report: MetricsReport) -> pd.DataFrame:
    rows = [(run, mode, metric, k, value) for metric, k, value in report.rows()]
    frame = pd.DataFrame(rows, columns=METRIC_COLUMNS)
    frame["K"] = frame["K"].astype("Int64")
    return frame


def per_class_frame(report: MetricsReport, vocab: PredicateVocabulary,
                    head: set[int] | None = None) -> pd.DataFrame:
    frame = pd.DataFrame({
        "predicate": vocab.names,
        "train_frequency": vocab.train_frequency,
    })
    if head is not None:
        frame["group"] = ["head" if k in head else "tail" for k in range(vocab.n_p)]
    for k in report.k_list:
        frame[f"recall@{k}"] = report.per_class[k]
    return frame


def correlation_frame(matrix: np.ndarray, vocab: PredicateVocabulary) -> pd.DataFrame:
    return pd.DataFrame(matrix, index=pd.Index(vocab.names, name="predicate"), columns=vocab.names)


def empirical_correlation(probabilities: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Mean masked non-target distribution of the predictions, per ground-truth class.

    Row c averages, over segments labelled c, the softmax of the prediction
    logits with position c removed. Classes without segments get a NaN row.
    """
    p = np.clip(np.asarray(probabilities, dtype=np.float64), EPS, 1.0 - EPS)
    raw = np.log(p) - np.log1p(-p)
    n_p = raw.shape[1]
    out = np.full((n_p, n_p), np.nan)
    for c in range(n_p):
        rows = raw[labels[:, c] > 0]
        if len(rows) == 0:
            continue
        z = rows.copy()
        z[:, c] = -np.inf
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        out[c] = (e / e.sum(axis=1, keepdims=True)).mean(axis=0)
    return out


def write_csv(frame: pd.DataFrame, path: str | Path, index: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=index)
    logger.info(f"Wrote {path}")
    return path
