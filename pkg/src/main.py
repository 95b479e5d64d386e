"""Entry point for the decoupled label learning toolkit."""

import argparse
import logging
import sys
from pathlib import Path

from src.config.experiment import load_experiment
from src.data.records import load
from src.data.records import save as save_records
from src.data.synthetic import generate
from src.labels.vocabulary import save_vocabulary
from src.training.compare import compare_files
from src.training.trainer import evaluate, restore, train

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dll-toolkit", description="Decoupled label learning for long-tailed predicates")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (default: out_dir setting or runs/<name>)")
    p.add_argument("--resume", help="checkpoint manifest to continue from")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a JSONL split")
    p.add_argument("--checkpoint", required=True, help="checkpoint_eNNN.manifest inside a run directory")
    p.add_argument("--data", required=True, help="JSONL records to evaluate on")
    p.add_argument("--out", help="directory for the CSV reports (default: the checkpoint's directory)")

    p = sub.add_parser("compare", help="train several configurations and tabulate the results")
    p.add_argument("--configs", nargs="+", required=True)
    p.add_argument("--seeds", nargs="+", type=int, help="run every config once per seed")
    p.add_argument("--out", default="runs/compare")

    p = sub.add_parser("gen-data", help="write the synthetic benchmark of a configuration to disk")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="data")
    return parser


def run(args: argparse.Namespace):
    if args.command == "train":
        overrides = {"out_dir": args.out} if args.out else None
        cfg = load_experiment(args.config, overrides)
        result = train(cfg, resume=args.resume)
        if result.report is not None:
            logger.info(f"Final Mean={result.report.mean:.4f} mAP={result.report.macro_ap:.4f}")

    elif args.command == "eval":
        cfg, model, M, vocab = restore(args.checkpoint)
        out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent
        report = evaluate(model, M, load(args.data, vocab.n_p), vocab, cfg, out_dir)
        for metric, k, value in report.rows():
            logger.info(f"{metric}{'' if k is None else f'@{k}'} = {value:.4f}")

    elif args.command == "compare":
        table = compare_files(args.configs, args.seeds, args.out)
        logger.info(f"Compared {len(table)} runs; tables in {args.out}")

    elif args.command == "gen-data":
        cfg = load_experiment(args.config)
        train_set, test_set, vocab = generate(cfg.synthetic)
        out = Path(args.out)
        save_records(train_set, out / "train.jsonl")
        save_records(test_set, out / "test.jsonl")
        save_vocabulary(vocab, out / "vocab.tsv")


def main(argv: list[str] | None = None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s [%(name)s] %(levelname)s: %(message)s",
    )
    try:
        run(args)
    except (ValueError, RuntimeError, ArithmeticError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
