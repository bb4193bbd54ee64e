"""Command-line entry point: ``seglatent <command> ...``."""
import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .checks import band_check, model_grad_check, oracle_check
from .data import DataError, generate_synthetic, load_dataset, save_dataset
from .experiments import run_ablation
from .inspection import inspect_record
from .model import ConfigError, NumericalError, closed_form_param_count, count_params, load_config
from .train import build_model, evaluate, load_checkpoint, load_splits, save_checkpoint, train

log = logging.getLogger("seglatent")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


def cmd_train(args):
    config = load_config(args.config)
    splits = load_splits(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    result = train(config, splits.train, splits.dev)
    elapsed = time.perf_counter() - start
    (out / "metrics.log").write_text(result.log_text(), encoding="utf-8")
    save_checkpoint(result.model, out / "checkpoint.bin", extra={"best_epoch": result.best_epoch})
    if splits.eval:
        print(f"eval {evaluate(result.model, splits.eval).line()}")
    print(f"best_epoch={result.best_epoch} epochs_run={len(result.history)} seconds={elapsed:.1f}")
    return EXIT_OK


def cmd_eval(args):
    model, _ = load_checkpoint(args.checkpoint)
    metrics = evaluate(model, load_dataset(args.data))
    print(metrics.line())
    print("confusion (rows gold, cols predicted; positive, negative, neutral)")
    for row in metrics.confusion:
        print(" ".join(f"{v:5d}" for v in row))
    return EXIT_OK


def cmd_gradcheck(args):
    start = time.perf_counter()
    report = model_grad_check(seed=args.seed)
    for name, err in sorted(report.errors.items()):
        print(f"{name:<28} {err:.3e}")
    name, worst = report.worst
    print(f"worst={worst:.3e} ({name}) tol={report.tol:g} seconds={time.perf_counter() - start:.1f}")
    return EXIT_OK if report.passed else EXIT_NUMERICAL


def cmd_oracle_check(args):
    report = oracle_check(trials=args.trials, seed=args.seed)
    mismatches = band_check(seed=args.seed)
    print(report.line())
    print(f"band_mismatches={mismatches}")
    return EXIT_OK if report.passed() and mismatches == 0 else EXIT_NUMERICAL


def cmd_inspect(args):
    model, _ = load_checkpoint(args.checkpoint)
    records = load_dataset(args.data) if args.data else load_splits(model.config).eval
    if not 0 <= args.record_id < len(records):
        raise DataError(f"record id {args.record_id} out of range (0..{len(records) - 1})")
    for path in inspect_record(model, records[args.record_id], args.record_id, args.out):
        print(path)
    return EXIT_OK


def cmd_ablate(args):
    table = run_ablation(load_config(args.config))
    print(table.render(), end="")
    return EXIT_OK


def cmd_gen_data(args):
    records = generate_synthetic(args.seed, args.size, min_clauses=args.min_clauses, max_clauses=args.max_clauses)
    save_dataset(records, args.out)
    print(f"wrote {len(records)} records to {args.out}")
    return EXIT_OK


def cmd_params(args):
    config = load_config(args.config)
    splits = load_splits(config)
    model = build_model(config, splits.train)
    model.forward(model.featurize(splits.train[0]))
    actual = count_params(model.params)
    formula = closed_form_param_count(config, len(model.word_vocab), len(model.label_vocab))
    width = max(len(name) for name, _ in model.params.items())
    for name, node in model.params.items():
        print(f"{name:<{width}} {'x'.join(map(str, node.shape)) or 'scalar':>12} {node.value.size:>8}")
    print(f"total={actual} closed_form={formula}")
    return EXIT_OK if actual == formula else EXIT_INVALID


class _Parser(argparse.ArgumentParser):
    """Usage errors are validation failures: exit 1, leaving 2 for numerics."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="seglatent", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss")
    p.add_argument("--seed", type=int, default=1)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("oracle-check", help="matrix-tree marginals against enumeration")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("inspect", help="dump attention and tree matrices for one record")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--record-id", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--data", help="dataset file (default: the checkpoint config's eval split)")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("ablate", help="compare ablations and fusion modes over seeds")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gen-data", help="write a synthetic dataset file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-clauses", type=int, default=1)
    p.add_argument("--max-clauses", type=int, default=3)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("params", help="print the parameter count")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_params)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, DataError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
