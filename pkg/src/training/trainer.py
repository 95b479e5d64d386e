"""Training loop for the four run modes.

Per iteration, in order (each phase runs its own forward pass, backward pass
and optimizer step):

    target       gamma * L_t          D_a, D_s, A, S   (E, C for the joint model)
                 (+ gamma * w * L_pat on the PDL heads)
    adversarial  L_PDL through GRL    D_a, D_s, N_a2s, N_s2a
    correlation  gamma * L_cm         M
    transfer     gamma * alpha * L_nt D_a, D_s, A, S   (E, C), using the updated M

baseline runs target only; pdl runs target and adversarial; kdl runs target,
correlation and transfer on the joint model; dll runs all four. gamma is 1
outside pdl/dll.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.autodiff.ops import add, logit, scale
from src.autodiff.optim import optimizer_step
from src.autodiff.parameters import ParameterSet
from src.autodiff.tensor import Tape, Tensor
from src.config.experiment import ExperimentConfig
from src.data.records import SegmentRecord, label_counts, load, partition_by_frequency, to_arrays
from src.data.synthetic import generate
from src.evaluation.metrics import MetricsReport, RankedPrediction, build_report
from src.evaluation.report import (
    correlation_frame,
    empirical_correlation,
    metrics_frame,
    per_class_frame,
    write_csv,
)
from src.labels.vocabulary import PredicateVocabulary, load_vocabulary, save_vocabulary
from src.model.joint import JointModel
from src.model.kdl import (
    CorrelationMatrix,
    alpha_at,
    batch_correlation_loss,
    batch_transfer_loss,
    gamma,
    target_loss,
)
from src.model.pdl import PDLModel, adversarial_loss, pattern_loss
from src.training.checkpoint import Checkpoint, load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

EVAL_BATCH = 1024


class TrainingDivergedError(RuntimeError):
    """A loss or gradient became non-finite; carries the iteration index and the losses seen so far."""

    def __init__(self, iteration: int, losses: dict[str, float]):
        self.iteration = iteration
        self.losses = dict(losses)
        breakdown = ", ".join(f"{k}={v:.6g}" for k, v in losses.items())
        super().__init__(f"Training diverged at iteration {iteration}: {breakdown}")


@dataclass
class RunLog:
    iterations: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    update_trace: list[tuple[str, tuple[str, ...]]] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.iterations)

    def epoch_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.epochs)


@dataclass
class TrainResult:
    model: PDLModel | JointModel
    correlation: CorrelationMatrix | None
    log: RunLog
    vocab: PredicateVocabulary
    train: list[SegmentRecord]
    test: list[SegmentRecord]
    report: MetricsReport | None = None
    checkpoints: list[Path] = field(default_factory=list)


def load_data(cfg: ExperimentConfig) -> tuple[list[SegmentRecord], list[SegmentRecord], PredicateVocabulary]:
    """Synthetic benchmark, or the JSONL splits and vocabulary file named in ``cfg``."""
    if cfg.uses_synthetic:
        return generate(cfg.synthetic)
    vocab = load_vocabulary(cfg.vocab_path)
    train = load(cfg.train_path, vocab.n_p)
    test = load(cfg.test_path, vocab.n_p)
    if not any(vocab.train_frequency):
        vocab = vocab.with_frequencies(label_counts(train, vocab.n_p))
    return train, test, vocab


def build_model(cfg: ExperimentConfig, vocab: PredicateVocabulary, feature_dim: int) -> PDLModel | JointModel:
    if cfg.mode in ("pdl", "dll"):
        return PDLModel.build(vocab, cfg.pdl, feature_dim, cfg.hidden, cfg.seed)
    return JointModel.build(vocab, feature_dim, cfg.hidden, cfg.seed)


class _Phases:
    """Runs one forward/backward/step phase and records what it touched."""

    def __init__(self, cfg: ExperimentConfig, log: RunLog, trace: bool):
        self.cfg = cfg
        self.log = log
        self.trace = trace
        self.iteration = 0
        self.losses: dict[str, float] = {}

    def run(self, phase: str, params: ParameterSet, groups: tuple[str, ...],
            loss_fn: Callable[[], tuple[Tensor, Tensor]], skip_if_constant: bool = False) -> float:
        """``loss_fn`` returns (weighted loss to descend, unweighted loss to log)."""
        params.zero_grad()
        with Tape() as tape:
            loss, raw = loss_fn()
            self.losses[phase] = raw.item()
            if not np.isfinite(loss.item()) or not np.isfinite(raw.item()):
                raise TrainingDivergedError(self.iteration, self.losses)
            if skip_if_constant and not loss.tracked:
                logger.debug(f"iteration {self.iteration}: {phase} step skipped (no gradient)")
                return raw.item()
            tape.backward(loss)
        try:
            optimizer_step(params, self.cfg.lr, self.cfg.optimizer, groups)
        except FloatingPointError as exc:
            logger.error(f"iteration {self.iteration}: {phase} step aborted: {exc}")
            raise TrainingDivergedError(self.iteration, self.losses) from exc
        if self.trace:
            self.log.update_trace.append((phase, tuple(groups)))
        return raw.item()


def train_iteration(phases: _Phases, model, M: CorrelationMatrix | None, headers: np.ndarray,
                    xb: np.ndarray, qb: np.ndarray, epoch: int) -> dict[str, float]:
    cfg = phases.cfg
    mode = cfg.mode
    g = gamma(epoch, cfg.kdl) if mode in ("pdl", "dll") else 1.0
    alpha = alpha_at(cfg.kdl, phases.iteration, epoch)
    phases.losses = {}
    params = model.params
    supervise_patterns = isinstance(model, PDLModel) and cfg.pdl.pattern_weight > 0.0
    w_pat = cfg.pdl.pattern_weight if supervise_patterns else 0.0

    def target():
        if not supervise_patterns:
            l_t = target_loss(model.predicate_probabilities(xb), qb)
            return scale(l_t, g), l_t
        out = model.forward(xb)
        l_t = target_loss(model.predicates_from(out), qb)
        l_pat = pattern_loss(model, out, qb)
        phases.losses["pattern"] = l_pat.item()
        return scale(add(l_t, scale(l_pat, w_pat)), g), l_t

    def adversarial():
        out = model.forward(xb)
        l_pdl = adversarial_loss(model, out.f_a, out.f_s, out.raw_a, out.raw_s, cfg.pdl)
        return l_pdl, l_pdl

    def correlation():
        l_cm = batch_correlation_loss(M, logit(model.predicate_probabilities(xb)), qb)
        return scale(l_cm, g), l_cm

    def transfer():
        l_nt = batch_transfer_loss(M, logit(model.predicate_probabilities(xb)), qb, headers)
        return scale(l_nt, g * alpha), l_nt

    l_t = phases.run("target", params, model.update_groups, target)
    l_pat = phases.losses.get("pattern", 0.0)
    l_pdl = l_cm = l_nt = 0.0
    if mode in ("pdl", "dll") and cfg.pdl.adversarial:
        l_pdl = phases.run("adversarial", params, ("D_a", "D_s", "N_a2s", "N_s2a"), adversarial)
    if mode in ("kdl", "dll"):
        l_cm = phases.run("correlation", M.params, (M.group,), correlation, skip_if_constant=True)
        if g * alpha == 0.0:
            logger.debug(f"iteration {phases.iteration}: transfer step skipped (zero weight)")
        else:
            l_nt = phases.run("transfer", params, model.update_groups, transfer, skip_if_constant=True)

    return {
        "iteration": phases.iteration,
        "epoch": epoch,
        "L_t": l_t,
        "L_pat": l_pat,
        "L_pdl": l_pdl,
        "L_cm": l_cm,
        "L_nt": l_nt,
        "total": l_pdl + g * (l_t + w_pat * l_pat + l_cm + alpha * l_nt),
        "alpha": alpha,
        "gamma": g,
    }


def train(cfg: ExperimentConfig, trace_updates: bool = False, resume: str | Path | None = None,
          data: tuple[list[SegmentRecord], list[SegmentRecord], PredicateVocabulary] | None = None,
          write_outputs: bool = True) -> TrainResult:
    """Train ``cfg.mode`` for ``cfg.epochs`` epochs and evaluate on the test split.

    Shuffling draws one permutation per epoch from a generator seeded with
    ``cfg.seed``, so a run is bit-for-bit reproducible. With ``resume`` the
    parameters, M, optimizer moments, iteration counter and epoch come from the
    given checkpoint manifest.
    """
    errors = cfg.validate()
    if errors:
        raise ValueError("Invalid experiment config:\n  " + "\n  ".join(errors))
    train_set, test_set, vocab = data if data is not None else load_data(cfg)
    features, labels = to_arrays(train_set, vocab.n_p)
    model = build_model(cfg, vocab, features.shape[1])
    M = CorrelationMatrix(vocab.n_p) if cfg.mode in ("kdl", "dll") else None
    headers = vocab.headers()
    head, _ = partition_by_frequency(vocab.train_frequency, cfg.head_quantile)
    out_dir = cfg.output_dir

    log = RunLog()
    phases = _Phases(cfg, log, trace_updates)
    start_epoch = 0
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.mode != cfg.mode:
            raise ValueError(f"Checkpoint {resume} is a '{ckpt.mode}' run, config asks for '{cfg.mode}'")
        ckpt.restore_parameters(model.params)
        if M is not None:
            ckpt.restore_parameters(M.params)
        phases.iteration = ckpt.iteration
        start_epoch = ckpt.epoch
        logger.info(f"Resumed from {resume} at epoch {start_epoch}, iteration {phases.iteration}")

    logger.info(
        f"Training '{cfg.name}': mode={cfg.mode}, {len(train_set)} train / {len(test_set)} test, "
        f"n_p={vocab.n_p}, epochs={cfg.epochs}, optimizer={cfg.optimizer}, lr={cfg.lr}"
    )
    if write_outputs:
        save_vocabulary(vocab, out_dir / "vocab.tsv")

    rng = np.random.default_rng(cfg.seed)
    for _ in range(start_epoch):
        rng.permutation(len(train_set))

    result = TrainResult(model, M, log, vocab, train_set, test_set)
    for epoch in range(start_epoch, cfg.epochs):
        order = rng.permutation(len(train_set))
        batches = range(0, len(order), cfg.batch_size)
        rows = []
        for start in tqdm(batches, desc=f"epoch {epoch + 1}/{cfg.epochs}", disable=not cfg.progress, leave=False):
            idx = order[start:start + cfg.batch_size]
            row = train_iteration(phases, model, M, headers, features[idx], labels[idx], epoch)
            logger.debug(
                f"iteration {row['iteration']}: L_t={row['L_t']:.4f} L_pat={row['L_pat']:.4f} "
                f"L_pdl={row['L_pdl']:.4f} L_cm={row['L_cm']:.4f} L_nt={row['L_nt']:.4f} alpha={row['alpha']:.4g}"
            )
            rows.append(row)
            phases.iteration += 1
        log.iterations.extend(rows)

        report = evaluate(model, M, test_set, vocab, cfg, head=head)
        result.report = report
        summary = {"epoch": epoch}
        summary.update({k: float(np.mean([r[k] for r in rows])) for k in ("L_t", "L_pat", "L_pdl", "L_cm", "L_nt", "total")})
        summary.update({"alpha": rows[-1]["alpha"], "gamma": rows[-1]["gamma"]})
        summary.update({f"R@{k}": report.recall[k] for k in report.k_list})
        summary.update({f"mR@{k}": report.mean_recall[k] for k in report.k_list})
        summary["Mean"] = report.mean
        log.epochs.append(summary)
        k_show = report.k_list[len(report.k_list) // 2]
        logger.info(
            f"epoch {epoch + 1}/{cfg.epochs}: total={summary['total']:.4f} L_t={summary['L_t']:.4f} "
            f"alpha={summary['alpha']:.4g} gamma={summary['gamma']:.4g} "
            f"R@{k_show}={report.recall[k_show]:.4f} mR@{k_show}={report.mean_recall[k_show]:.4f}"
        )

        last = epoch + 1 == cfg.epochs
        if write_outputs and (last or (cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0)):
            ckpt = Checkpoint(cfg.mode, epoch + 1, phases.iteration,
                              alpha_at(cfg.kdl, phases.iteration, epoch + 1), cfg.to_dict())
            ckpt.add_parameters(model.params)
            if M is not None:
                ckpt.add_parameters(M.params)
            result.checkpoints.append(save_checkpoint(ckpt, out_dir))

    if write_outputs:
        write_csv(log.to_frame(), out_dir / "runlog.csv")
        write_csv(log.epoch_frame(), out_dir / "epochs.csv")
        if result.report is not None:
            write_artifacts(result.report, model, M, test_set, vocab, cfg, out_dir, head)
    logger.info(f"Training '{cfg.name}' finished after {phases.iteration} iterations")
    return result


def predict_records(model, records: list[SegmentRecord]) -> np.ndarray:
    if not records:
        raise ValueError("Cannot predict an empty split: it holds no records")
    features = np.stack([r.features for r in records])
    return np.concatenate([model.predict(features[i:i + EVAL_BATCH]) for i in range(0, len(features), EVAL_BATCH)])


def evaluate(model, M: CorrelationMatrix | None, test: list[SegmentRecord], vocab: PredicateVocabulary,
             cfg: ExperimentConfig, out_dir: str | Path | None = None, head: set[int] | None = None) -> MetricsReport:
    """Rank every test segment's predicate probabilities and compute the configured metrics.

    Reads the model and M without modifying them. With ``out_dir`` the CSV
    artifacts are written there.
    """
    if head is None:
        head, _ = partition_by_frequency(vocab.train_frequency, cfg.head_quantile)
    tail = set(range(vocab.n_p)) - head
    probs = predict_records(model, test)
    preds = [RankedPrediction(r.id, p) for r, p in zip(test, probs)]
    truths = {r.id: r.labels for r in test}
    report = build_report(preds, truths, vocab.n_p, cfg.k_list, head, tail)
    if out_dir is not None:
        write_artifacts(report, model, M, test, vocab, cfg, Path(out_dir), head, probs)
    return report


def write_artifacts(report: MetricsReport, model, M: CorrelationMatrix | None, test: list[SegmentRecord],
                    vocab: PredicateVocabulary, cfg: ExperimentConfig, out_dir: Path, head: set[int],
                    probs: np.ndarray | None = None):
    write_csv(metrics_frame(cfg.name, cfg.mode, report), out_dir / "metrics.csv")
    write_csv(per_class_frame(report, vocab, head), out_dir / "per_class.csv")
    if M is not None:
        matrix = M.normalized()
    else:
        if probs is None:
            probs = predict_records(model, test)
        matrix = empirical_correlation(probs, np.stack([r.multi_hot(vocab.n_p) for r in test]))
    write_csv(correlation_frame(matrix, vocab), out_dir / "correlation.csv", index=True)


def restore(manifest: str | Path) -> tuple[ExperimentConfig, PDLModel | JointModel, CorrelationMatrix | None, PredicateVocabulary]:
    """Rebuild config, model, M and vocabulary from a checkpoint in a run directory."""
    manifest = Path(manifest)
    ckpt = load_checkpoint(manifest)
    cfg = ExperimentConfig.from_dict(ckpt.config)
    vocab = load_vocabulary(manifest.parent / "vocab.tsv")
    first = next(v for k, v in ckpt.arrays.items() if k.endswith(".W1"))
    model = build_model(cfg, vocab, first.shape[0])
    ckpt.restore_parameters(model.params)
    M = None
    if cfg.mode in ("kdl", "dll"):
        M = CorrelationMatrix(vocab.n_p)
        ckpt.restore_parameters(M.params)
    return cfg, model, M, vocab
