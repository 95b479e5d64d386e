"""Run several experiment configs (optionally over several seeds) and tabulate the results."""

from __future__ import annotations

import logging
from pathlib import Path

import pandas as pd

from src.config.experiment import ExperimentConfig, load_experiment
from src.evaluation.metrics import MetricsReport
from src.evaluation.report import write_csv
from src.labels.vocabulary import PredicateVocabulary
from src.training.trainer import train

logger = logging.getLogger(__name__)


def report_row(cfg: ExperimentConfig, report: MetricsReport) -> dict:
    """One comparison-table row: run identity plus one column per metric."""
    row = {"run": cfg.name, "mode": cfg.mode, "seed": cfg.seed}
    for k in report.k_list:
        row[f"R@{k}"] = report.recall[k]
        row[f"mR@{k}"] = report.mean_recall[k]
        row[f"P@{k}"] = report.precision[k]
    row["Mean"] = report.mean
    row["mAP"] = report.macro_ap
    for k in report.k_list:
        row[f"mR_head@{k}"] = report.head_mean_recall.get(k)
        row[f"mR_tail@{k}"] = report.tail_mean_recall.get(k)
    return row


def same_label_space(a: PredicateVocabulary, b: PredicateVocabulary) -> bool:
    return (a.predicates, a.actional_patterns, a.spatial_patterns) == (b.predicates, b.actional_patterns, b.spatial_patterns)


def compare(cfgs: list[ExperimentConfig], seeds: list[int] | None = None,
            out_dir: str | Path | None = None) -> pd.DataFrame:
    """Train and evaluate every config once per seed; one row per (config, seed).

    All runs must share one predicate vocabulary. With ``out_dir``, each run
    writes its artifacts to ``<out_dir>/<name>-s<seed>`` and the tables go to
    ``comparison.csv`` and ``summary.csv`` (seed means per run).
    """
    if not cfgs:
        raise ValueError("compare: no configs given")
    rows = []
    reference: PredicateVocabulary | None = None
    for base in cfgs:
        for seed in seeds if seeds else [base.seed]:
            cfg = ExperimentConfig.from_dict({**base.to_dict(), "seed": seed})
            if out_dir is not None:
                cfg.out_dir = str(Path(out_dir) / f"{cfg.name}-s{seed}")
            logger.info(f"compare: running '{cfg.name}' (mode={cfg.mode}, seed={seed})")
            result = train(cfg, write_outputs=out_dir is not None)
            if reference is None:
                reference = result.vocab
            elif not same_label_space(reference, result.vocab):
                raise ValueError(f"Run '{cfg.name}' uses a different predicate vocabulary from the first run")
            rows.append(report_row(cfg, result.report))

    table = pd.DataFrame(rows)
    if out_dir is not None:
        write_csv(table, Path(out_dir) / "comparison.csv")
        write_csv(summarize(table), Path(out_dir) / "summary.csv")
    return table


def summarize(table: pd.DataFrame) -> pd.DataFrame:
    """Mean of every metric column over seeds, per (run, mode)."""
    metrics = table.drop(columns=["seed"])
    return metrics.groupby(["run", "mode"], sort=False).mean(numeric_only=True).reset_index()


def compare_files(paths: list[str | Path], seeds: list[int] | None = None,
                  out_dir: str | Path | None = None) -> pd.DataFrame:
    return compare([load_experiment(p) for p in paths], seeds, out_dir)
