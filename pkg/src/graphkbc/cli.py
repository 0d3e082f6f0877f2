"""Command-line entry point.

Subcommands: prepare, train, evaluate, gradcheck, sweep, predict.
Exit codes: 0 ok, 1 validation failure, 2 I/O failure, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import itertools
import sys
from pathlib import Path

import numpy as np

from .adjacency import build_adjacency
from .autodiff import NumericError
from .checkpoint import CheckpointError
from .data import DataFormatError, load_dataset, prepare_dataset, save_dataset
from .decoder import prob
from .evaluation import evaluate, indegree_report, report_csv, report_text
from .model import model_from_checkpoint
from .training import ConfigError, TrainConfig, fit
from .verify import end_to_end_gradcheck

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_NUMERIC = 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 by default; bad flags are a validation failure here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(message, EXIT_VALIDATION)


def _build_parser() -> _Parser:
    parser = _Parser(prog="graphkbc",
                     description="Knowledge base completion engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="encode triple files into a dataset directory")
    p.add_argument("--train", required=True, help="training triple TSV")
    p.add_argument("--valid", required=True, help="validation triple TSV")
    p.add_argument("--test", required=True, help="test triple TSV")
    p.add_argument("--attributes", help="optional attribute triple TSV")
    p.add_argument("--out", required=True, help="output dataset directory")

    p = sub.add_parser("train", help="train a model on a prepared dataset")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--data", help="prepared dataset directory (overrides config data_dir)")
    p.add_argument("--out", required=True, help="output directory for checkpoints and metrics")
    p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("evaluate", help="filtered ranking metrics for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="prepared dataset directory")
    p.add_argument("--split", default="test", choices=["train", "valid", "test"])
    p.add_argument("--indegree-report", action="store_true",
                   help="also report metrics bucketed by gold-entity indegree")
    p.add_argument("--csv", help="write the (bucketed) report as CSV to this path")

    p = sub.add_parser("gradcheck", help="finite-difference check on a toy graph")
    p.add_argument("--toy-size", type=int, default=6, help="entities in the toy graph")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--threshold", type=float, default=1e-4)

    p = sub.add_parser("sweep", help="train over a config grid, one run per point")
    p.add_argument("--grid", required=True,
                   help="grid file: key=v1,v2,... per line, cartesian product")
    p.add_argument("--config", help="base config file")
    p.add_argument("--data", help="prepared dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("predict", help="top-k objects for one (subject, relation) query")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="prepared dataset directory")
    p.add_argument("--subject", required=True)
    p.add_argument("--relation", required=True)
    p.add_argument("--topk", type=int, default=10)

    return parser


def _require_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"file not found: {p}", EXIT_IO)
    return p


def _load_config(args) -> TrainConfig:
    if getattr(args, "config", None):
        config = TrainConfig.from_file(_require_file(args.config))
    else:
        config = TrainConfig()
    if getattr(args, "data", None):
        config.data_dir = args.data
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if not config.data_dir:
        raise CliError("no dataset: pass --data or set data_dir in the config",
                       EXIT_VALIDATION)
    config.validate()
    return config


def _cmd_prepare(args) -> int:
    for path in (args.train, args.valid, args.test):
        _require_file(path)
    attrs = _require_file(args.attributes) if args.attributes else None
    dataset = prepare_dataset(args.train, args.valid, args.test, attrs)
    save_dataset(dataset, args.out)
    sys.stdout.write((Path(args.out) / "stats.txt").read_text(encoding="utf-8"))
    return EXIT_OK


def _cmd_train(args) -> int:
    config = _load_config(args)
    dataset = load_dataset(config.data_dir)
    result = fit(config, dataset, args.out)
    print(f"best validation mrr {result.best_mrr:.6f} after {result.epochs_run} epochs")
    print(f"checkpoint: {result.best_checkpoint}")
    print(f"metrics:    {result.metrics_path}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    _require_file(args.checkpoint)
    dataset = load_dataset(args.data)
    adjacency = build_adjacency(dataset.store, dataset.vocab)
    model = model_from_checkpoint(args.checkpoint, adjacency.num_types)
    if args.indegree_report:
        report = indegree_report(dataset, model, adjacency, args.split)
    else:
        report = evaluate(dataset, model, adjacency, args.split)
    sys.stdout.write(report_text(report))
    if args.csv:
        Path(args.csv).write_text(report_csv(report), encoding="utf-8")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    if args.toy_size < 3:
        raise CliError("--toy-size must be at least 3", EXIT_VALIDATION)
    report = end_to_end_gradcheck(toy_size=args.toy_size, seed=args.seed)
    worst = max(report.values())
    for name in sorted(report):
        print(f"{name:30s} rel err {report[name]:.3e}")
    if worst < args.threshold:
        print(f"max rel err {worst:.3e} < {args.threshold:g}: OK")
        return EXIT_OK
    print(f"max rel err {worst:.3e} >= {args.threshold:g}: FAIL")
    return EXIT_NUMERIC


def _parse_grid(path: Path) -> list[dict[str, str]]:
    axes: list[tuple[str, list[str]]] = []
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CliError(f"{path}:{line_no}: expected key=v1,v2,...",
                           EXIT_VALIDATION)
        key, _, raw = line.partition("=")
        values = [v.strip() for v in raw.split(",") if v.strip()]
        if not values:
            raise CliError(f"{path}:{line_no}: no values for {key.strip()!r}",
                           EXIT_VALIDATION)
        axes.append((key.strip(), values))
    if not axes:
        raise CliError(f"{path}: empty grid", EXIT_VALIDATION)
    keys = [k for k, _ in axes]
    return [dict(zip(keys, combo))
            for combo in itertools.product(*(vals for _, vals in axes))]


def _cmd_sweep(args) -> int:
    grid = _parse_grid(_require_file(args.grid))
    base = _load_config(args)
    dataset = load_dataset(base.data_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    keys = list(grid[0].keys())
    lines = [",".join(keys + ["epochs_run", "best_mrr"])]
    for i, point in enumerate(grid):
        mapping = {k: str(v) for k, v in vars(base).items()}
        mapping.update(point)
        try:
            config = TrainConfig.from_mapping(mapping)
        except ConfigError as exc:
            raise CliError(f"grid point {i}: {exc}", EXIT_VALIDATION) from exc
        run_dir = out / f"run_{i:03d}"
        print(f"[sweep {i + 1}/{len(grid)}] {point}")
        result = fit(config, dataset, run_dir)
        lines.append(",".join([point[k] for k in keys]
                              + [str(result.epochs_run), f"{result.best_mrr:.6f}"]))
    (out / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {out / 'sweep.csv'}")
    return EXIT_OK


def _cmd_predict(args) -> int:
    _require_file(args.checkpoint)
    dataset = load_dataset(args.data)
    vocab = dataset.vocab
    if args.subject not in vocab.entity_index:
        raise CliError(f"unknown entity: {args.subject}", EXIT_VALIDATION)
    if args.relation not in vocab.relation_index:
        raise CliError(f"unknown relation: {args.relation}", EXIT_VALIDATION)
    if args.topk < 1:
        raise CliError("--topk must be >= 1", EXIT_VALIDATION)
    adjacency = build_adjacency(dataset.store, dataset.vocab)
    model = model_from_checkpoint(args.checkpoint, adjacency.num_types)
    entities = model.entity_matrix(adjacency)
    s = vocab.entity_index[args.subject]
    r = vocab.relation_index[args.relation]
    scores = model.score_eval(entities, np.asarray([s]), np.asarray([r]))[0]
    probs = prob(scores)
    top = np.argsort(-scores, kind="stable")[:args.topk]
    for rank, idx in enumerate(top, start=1):
        print(f"{rank:3d}  {vocab.entity_names[idx]:30s}  p={probs[idx]:.6f}")
    return EXIT_OK


_COMMANDS = {
    "prepare": _cmd_prepare,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "gradcheck": _cmd_gradcheck,
    "sweep": _cmd_sweep,
    "predict": _cmd_predict,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DataFormatError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
