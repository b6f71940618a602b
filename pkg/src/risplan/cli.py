"""Command-line entry point.

Commands: gen, train, eval, sweep, matrix, show-config. Every command is a
pure function of (config file, --set overrides, seeds, input files); report
paths write delimited data plus a rendered PNG figure. Exit status is 0 on
success, 1 on runtime failure, 2 on usage/config errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import dataset as ds
from . import plots
from .config import RunConfig, default_config, load_config, to_toml
from .diffusion import SampleConfig, load_planner, make_train_data, train_model
from .errors import ConfigError, RisplanError
from .evaluation import (
    METHODS,
    ExceedReport,
    context_from_config,
    evaluate_method,
    evaluate_samples,
    generalization_matrix,
    sweep,
)

__all__ = ["main"]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="TOML config file")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="SECTION.KEY=VALUE", help="override one config value")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="risplan",
                                     description="RIS deployment optimization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("show-config", help="print the effective configuration")
    _add_common(p)

    p = sub.add_parser("gen", help="generate and oracle-label scenarios")
    _add_common(p)
    p.add_argument("--out", type=Path, required=True, help="output JSONL path")
    p.add_argument("--count", type=int, required=True, help="number of samples")
    p.add_argument("--name", default=None, help="dataset name (default <N>obs_<K>users)")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("train", help="train the diffusion planner")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True, help="labeled training JSONL")
    p.add_argument("--out", type=Path, required=True, help="checkpoint output path")
    p.add_argument("--log", type=Path, default=None, help="training log CSV (default <out>.log.csv)")
    p.add_argument("--eval-data", type=Path, default=None,
                   help="held-out JSONL for in-training exceed-ratio logging")

    p = sub.add_parser("eval", help="evaluate a method on a labeled dataset")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--checkpoint", type=Path, default=None, help="required for method=diffusion")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("sweep", help="hyperparameter sensitivity scan")
    _add_common(p)
    p.add_argument("--parameter", choices=("omega", "p_uncond", "T"), required=True)
    p.add_argument("--values", required=True, help="comma-separated, strictly increasing")
    p.add_argument("--eval-data", type=Path, required=True)
    p.add_argument("--train-data", type=Path, default=None, help="needed for p_uncond/T sweeps")
    p.add_argument("--checkpoint", type=Path, default=None, help="needed for omega sweeps")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("matrix", help="cross-domain generalization matrix")
    _add_common(p)
    p.add_argument("--train-data", required=True, help="comma-separated labeled JSONL paths")
    p.add_argument("--test-data", required=True, help="comma-separated labeled JSONL paths")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)

    return parser


def _cmd_show_config(args) -> int:
    cfg = load_config(args.config, args.overrides)
    sys.stdout.write(to_toml(cfg))
    return 0


def _cmd_gen(args) -> int:
    cfg = load_config(args.config, args.overrides)
    if args.count < 0:
        raise ConfigError("--count must be >= 0")
    samples = ds.build_labeled_samples(
        cfg.scenario,
        cfg.radio,
        cfg.constraints,
        args.count,
        n_mc=cfg.n_mc,
        objective=cfg.objective,
        gate_cascade=cfg.gate_cascade,
        max_users=cfg.max_users,
        max_obstacles=cfg.max_obstacles,
        workers=args.workers,
    )
    name = args.name or ds.dataset_name(cfg.scenario.n_obstacles, cfg.scenario.n_users)
    manifest = ds.save_dataset(args.out, name, samples, cfg.manifest_config(), cfg.target_mode)
    print(f"wrote {manifest.n_samples} samples to {args.out} ({manifest.digest})")
    return 0


def _training_eval_fn(cfg: RunConfig, eval_data: Path):
    """Median exceed ratio on (up to) 32 held-out scenarios, for the log."""
    manifest, samples = ds.load_dataset(eval_data)
    ctx = context_from_config(manifest.config)
    subset = samples[:32]

    def eval_fn(planner) -> float:
        report = evaluate_samples(
            "diffusion", subset, ctx, dataset=manifest.name,
            planner=planner, sample_config=cfg.sample, seed=cfg.sample.seed,
        )
        return report.median

    return eval_fn


def _cmd_train(args) -> int:
    cfg = load_config(args.config, args.overrides)
    manifest, samples = ds.load_dataset(args.data)
    if not samples:
        raise ConfigError(f"training dataset {args.data} is empty")
    grid = samples[0].scenario.grid()
    ctx = context_from_config(manifest.config)
    data = make_train_data(samples, grid, cfg.target_mode, ctx.max_users, ctx.max_obstacles)
    log_path = args.log or args.out.with_suffix(".log.csv")
    eval_fn = None
    if args.eval_data is not None and cfg.train.eval_every > 0:
        eval_fn = _training_eval_fn(cfg, args.eval_data)
    _planner, rows = train_model(
        data, cfg.train, log_path=log_path, checkpoint_path=args.out, eval_fn=eval_fn
    )
    plots.save_convergence_plot(rows, log_path.with_suffix(".png"))
    print(f"trained {cfg.train.epochs} epochs; final loss {rows[-1][1]:.6f}; "
          f"checkpoint {args.out}")
    return 0


def _write_report(report: ExceedReport, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "report.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario_index", "exceed_ratio"])
        for i, v in enumerate(report.values):
            writer.writerow([i, repr(v)])
    (out_dir / "summary.json").write_text(
        json.dumps(report.summary_json(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    plots.save_exceed_hist(report.values, report.method, report.dataset,
                           out_dir / "exceed_hist.png")


def _cmd_eval(args) -> int:
    cfg = load_config(args.config, args.overrides)
    if args.method == "diffusion" and args.checkpoint is None:
        raise ConfigError("method=diffusion requires --checkpoint")
    report = evaluate_method(
        args.method,
        args.data,
        checkpoint_path=args.checkpoint if args.method == "diffusion" else None,
        sample_config=cfg.sample,
        seed=args.seed,
        workers=args.workers,
    )
    _write_report(report, args.out_dir)
    print(f"{args.method} on {report.dataset}: median E {report.median:.4f} "
          f"over {len(report.values)} scenarios ({report.excluded} excluded)")
    return 0


def _parse_values(raw: str) -> list[float]:
    try:
        return [float(v) for v in raw.split(",") if v.strip() != ""]
    except ValueError as e:
        raise ConfigError(f"bad --values list {raw!r}: {e}") from e


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.overrides)
    values = _parse_values(args.values)
    result = sweep(
        args.parameter,
        values,
        eval_data_path=args.eval_data,
        train_data_path=args.train_data,
        checkpoint_path=args.checkpoint,
        train_config=cfg.train,
        sample_config=cfg.sample,
        seed=args.seed,
        workers=args.workers,
    )
    args.out_dir.mkdir(parents=True, exist_ok=True)
    with (args.out_dir / "sweep.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parameter", "value", "median_exceed", "mean_exceed"])
        for value, med, mean in result.rows():
            writer.writerow([result.parameter, repr(value), repr(med), repr(mean)])
    plots.save_sweep_plot(result.parameter, result.values, result.median_e, result.mean_e,
                          args.out_dir / "sweep.png")
    best = max(range(len(values)), key=lambda i: result.median_e[i])
    print(f"{result.parameter} sweep: best median E {result.median_e[best]:.4f} "
          f"at {result.parameter}={result.values[best]}")
    return 0


def _cmd_matrix(args) -> int:
    cfg = load_config(args.config, args.overrides)
    train_paths = [Path(p) for p in args.train_data.split(",") if p]
    test_paths = [Path(p) for p in args.test_data.split(",") if p]
    result = generalization_matrix(
        train_paths,
        test_paths,
        train_config=cfg.train,
        sample_config=cfg.sample,
        seed=args.seed,
        workers=args.workers,
    )
    args.out_dir.mkdir(parents=True, exist_ok=True)
    with (args.out_dir / "matrix.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["train_set"] + list(result.test_names))
        for name, row in zip(result.train_names, result.median_e):
            writer.writerow([name] + [repr(v) for v in row])
    plots.save_matrix_plot(result.train_names, result.test_names, result.median_e,
                           args.out_dir / "matrix.png")
    print(f"matrix {result.shape[0]}x{result.shape[1]} written to {args.out_dir}")
    return 0


_COMMANDS = {
    "show-config": _cmd_show_config,
    "gen": _cmd_gen,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "matrix": _cmd_matrix,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except RisplanError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
