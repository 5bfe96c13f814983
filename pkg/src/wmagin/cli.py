"""Command-line entry points: train, eval, sweep, gradcheck, gen-synth."""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import sys
from pathlib import Path

from .data import (
    ConfigError,
    RunConfig,
    SynthSpec,
    generate_synthetic,
    load_dataset,
    parse_config,
    parse_config_text,
    save_dataset,
)
from .gradcheck import model_gradcheck
from .model import atomic_write_text, load_checkpoint, save_checkpoint
from .trainer import evaluate, split_indices, train

logger = logging.getLogger("wmagin")


def _load_run_config(path) -> RunConfig:
    return parse_config(path) if path else parse_config_text("")


def _dataset(args, run: RunConfig):
    if args.data:
        return load_dataset(args.data, run.model.num_classes)
    if run.synth is None:
        raise ConfigError("no --data given and the config has no synth.* section")
    return generate_synthetic(run.synth)


def _check_feature_dim(data, run: RunConfig) -> None:
    dims = {u.feature_dim for u in data}
    if len(dims) != 1:
        raise ValueError(f"inconsistent feature dimensions in dataset: {sorted(dims)}")
    (h,) = dims
    if h != run.model.feature_dim:
        raise ConfigError(f"dataset has {h} features per frame but model.feature_dim = {run.model.feature_dim}")


def _train_and_test(data, run: RunConfig, log_path=None):
    split = split_indices(len(data), run.train.split_ratio, seed=run.train.seed)
    pick = lambda idx: [data[i] for i in idx]  # noqa: E731
    result = train(pick(split.train), pick(split.valid), run.model, run.train, log_path=log_path)
    return result, evaluate(pick(split.test), result.params, run.model)


def cmd_train(args) -> int:
    run = _load_run_config(args.config)
    data = _dataset(args, run)
    _check_feature_dim(data, run)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tmp_log = out / ".train_log.jsonl.tmp"
    try:
        result, report = _train_and_test(data, run, log_path=tmp_log)
        save_checkpoint(out / "checkpoint.json", result.params, run.model,
                        {"best_epoch": result.best_epoch, "train_config": run.train.to_dict()})
        atomic_write_text(out / "test_report.json", json.dumps(report.to_dict(), indent=2))
        os.replace(tmp_log, out / "train_log.jsonl")
    finally:
        if tmp_log.exists():
            tmp_log.unlink()
    print(json.dumps({"best_epoch": result.best_epoch, "test": report.to_dict()}))
    return 0


def cmd_eval(args) -> int:
    params, config = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data, config.num_classes)
    report = evaluate(data, params, config)
    print(json.dumps(report.to_dict()))
    return 0


def parse_grid(text: str) -> tuple[str, list[tuple[str, list[str]]]]:
    """Split a grid file into base config text and ``sweep.<key> = v1; v2`` axes."""
    base, axes = [], []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line.startswith("sweep."):
            key, _, values = line[len("sweep."):].partition("=")
            options = [v.strip() for v in values.split(";") if v.strip()]
            if not options:
                raise ConfigError(f"sweep axis {key.strip()!r} has no values")
            axes.append((key.strip(), options))
        else:
            base.append(raw)
    return "\n".join(base), axes


def cmd_sweep(args) -> int:
    with open(args.grid) as fh:
        base_text, axes = parse_grid(fh.read())
    if args.config:
        with open(args.config) as fh:
            base_text = fh.read() + "\n" + base_text
    if not axes:
        raise ConfigError(f"{args.grid}: no sweep.* lines")
    runs = []
    for combo in itertools.product(*[opts for _, opts in axes]):
        text = base_text + "\n" + "\n".join(f"{k} = {v}" for (k, _), v in zip(axes, combo))
        runs.append((combo, parse_config_text(text, args.grid)))
    data = None
    rows = []
    for combo, run in runs:
        if data is None or not args.data:
            data = _dataset(args, run)
            _check_feature_dim(data, run)
        result, report = _train_and_test(data, run)
        row = {k: v for (k, _), v in zip(axes, combo)}
        row.update(best_epoch=result.best_epoch, test_wa=report.wa, test_ua=report.ua)
        rows.append(row)
        logger.info("%s", row)
    header = [k for k, _ in axes] + ["best_epoch", "test_wa", "test_ua"]
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(
            f"{row[h]:.4f}" if isinstance(row[h], float) else str(row[h]) for h in header))
    table = "\n".join(lines) + "\n"
    if args.out:
        atomic_write_text(args.out, table)
    sys.stdout.write(table)
    return 0


def cmd_gradcheck(args) -> int:
    errors = model_gradcheck(seed=args.seed)
    worst = max(errors.values())
    for name, err in errors.items():
        logger.info("%-20s %.3e", name, err)
    print(f"max relative error: {worst:.3e}")
    return 0 if worst < args.tol else 1


def cmd_gen_synth(args) -> int:
    spec = _load_run_config(args.spec).synth if args.spec else None
    spec = spec or SynthSpec()
    save_dataset(args.out, generate_synthetic(spec))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wmagin", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a feature CSV (or synthetic data) and write a checkpoint")
    p.add_argument("--config")
    p.add_argument("--data", help="feature CSV; omit to use the config's synth.* section")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint; prints a JSON report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train/evaluate every combination in a grid file")
    p.add_argument("--grid", required=True)
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--out", help="also write the results table here")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check on the tiny configuration")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("gen-synth", help="write a synthetic feature CSV")
    p.add_argument("--spec", help="config file with synth.* keys")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"wmagin {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
