"""Command-line entry points: dema <subcommand> [options]."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import tensor as T
from .delay import default_max_lag, delay_matrix
from .errors import DemaError
from .model import load_checkpoint, model_forward, save_checkpoint
from .pipeline import (DatasetSpec, TrainConfig, bench_scaling, evaluate,
                       load_csv_dataset, make_windows, model_config,
                       parse_config_file, shared_priors, train,
                       write_bench, write_metrics, write_predictions)
from .spectral import decompose


def _load_configs(args) -> tuple[TrainConfig, DatasetSpec]:
    if args.config:
        cfg, spec = parse_config_file(args.config)
    else:
        cfg, spec = TrainConfig(), DatasetSpec()
    if args.data:
        spec.path = args.data
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg, spec


def _read_window(path) -> tuple[np.ndarray, list]:
    """Load a whole CSV as one raw window [N, T] plus column names.

    Reuses the dataset loader for validation, then undoes the z-score.
    """
    spec = DatasetSpec(path=path, train_ratio=0.5, val_ratio=0.0,
                       test_ratio=0.5)
    s = load_csv_dataset(spec)
    raw = np.concatenate([s.train, s.val, s.test], axis=1)
    raw = raw * s.scaler_std[:, None] + s.scaler_mean[:, None]
    return raw, s.columns


def cmd_decompose(args):
    cfg, spec = _load_configs(args)
    window, columns = _read_window(spec.path)
    split = decompose(window, cfg.theta)
    os.makedirs(args.out, exist_ok=True)
    write_predictions(split.cross_time,
                      os.path.join(args.out, "cross_time.csv"), columns)
    write_predictions(split.cross_variate,
                      os.path.join(args.out, "cross_var.csv"), columns)
    with open(os.path.join(args.out, "selected.json"), "w") as fh:
        json.dump({"theta": split.theta,
                   "selected": list(split.selected)}, fh, indent=2)
        fh.write("\n")
    print(f"wrote cross_time.csv, cross_var.csv, selected.json to {args.out}")


def cmd_priors(args):
    cfg, spec = _load_configs(args)
    window, _ = _read_window(spec.path)
    max_lag = cfg.max_lag if cfg.max_lag > 0 else default_max_lag(window.shape[1])
    priors = delay_matrix(window, max_lag, cfg.patch_len)
    os.makedirs(args.out, exist_ok=True)
    for name, mat in (("tau", priors.tau), ("rho", priors.rho),
                      ("delta", priors.delta_tok)):
        with open(os.path.join(args.out, f"{name}.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in mat:
                writer.writerow(list(row))
    print(f"wrote tau.csv, rho.csv, delta.csv to {args.out}")


def cmd_train(args):
    cfg, spec = _load_configs(args)
    os.makedirs(args.out, exist_ok=True)
    result = train(cfg, spec)
    ckpt = os.path.join(args.out, "checkpoint.npz")
    save_checkpoint(result.state, ckpt)
    with open(os.path.join(args.out, "train_log.json"), "w") as fh:
        json.dump({"log": result.log, "best_epoch": result.best_epoch,
                   "diverged": result.diverged}, fh, indent=2)
        fh.write("\n")
    metrics = evaluate(result.state, spec, config=cfg)
    write_metrics(metrics, os.path.join(args.out, "metrics.json"))
    print(f"checkpoint: {ckpt}")
    for k, v in metrics.items():
        print(f"{k}: {v:.6f}")


def _checkpoint_path(args, cfg):
    if args.checkpoint:
        return args.checkpoint
    if cfg.checkpoint:
        return cfg.checkpoint
    return os.path.join(args.out, "checkpoint.npz")


def cmd_evaluate(args):
    cfg, spec = _load_configs(args)
    state = load_checkpoint(_checkpoint_path(args, cfg))
    metrics = evaluate(state, spec, config=cfg)
    os.makedirs(args.out, exist_ok=True)
    write_metrics(metrics, os.path.join(args.out, "metrics.json"))
    for k, v in metrics.items():
        print(f"{k}: {v:.6f}")


def _predict_task(args, task):
    cfg, spec = _load_configs(args)
    spec.task = task
    state = load_checkpoint(_checkpoint_path(args, cfg))
    splits = load_csv_dataset(spec)
    priors = shared_priors(splits, state.config) if cfg.global_priors else None
    mc = state.config
    outputs = []
    with T.no_grad():
        step = mc.lookback
        total = splits.test.shape[1]
        for start in range(0, total - step + 1, step):
            x = splits.test[:, start:start + step]
            pred = model_forward(x, state, priors).data
            outputs.append(pred)
    pred = np.concatenate(outputs, axis=1) if outputs else np.zeros((0, 0))
    os.makedirs(args.out, exist_ok=True)
    write_predictions(pred, os.path.join(args.out, "predictions.csv"),
                      splits.columns)
    metrics = evaluate(state, spec, splits=splits, config=cfg)
    write_metrics(metrics, os.path.join(args.out, "metrics.json"))
    for k, v in metrics.items():
        print(f"{k}: {v:.6f}")


def cmd_forecast(args):
    _predict_task(args, "forecast")


def cmd_impute(args):
    _predict_task(args, "impute")


def cmd_detect(args):
    _predict_task(args, "anomaly")


def cmd_classify(args):
    cfg, spec = _load_configs(args)
    spec.task = "classify"
    state = load_checkpoint(_checkpoint_path(args, cfg))
    spec.n_classes = state.config.n_classes
    metrics = evaluate(state, spec, config=cfg)
    os.makedirs(args.out, exist_ok=True)
    write_metrics(metrics, os.path.join(args.out, "metrics.json"))
    for k, v in metrics.items():
        print(f"{k}: {v:.6f}")


def cmd_bench(args):
    cfg, _ = _load_configs(args)
    lengths = [int(x) for x in args.lengths.split(",")]
    rows = bench_scaling(lengths, cfg)
    os.makedirs(args.out, exist_ok=True)
    write_bench(rows, os.path.join(args.out, "bench.csv"))
    for row in rows:
        print(f"T={row['T']}: {row['ms']:.1f} ms, {row['bytes']} bytes")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dema",
        description="Dual-path delay-aware state-space time series backbone")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "train": cmd_train,
        "evaluate": cmd_evaluate,
        "forecast": cmd_forecast,
        "impute": cmd_impute,
        "detect": cmd_detect,
        "classify": cmd_classify,
        "decompose": cmd_decompose,
        "priors": cmd_priors,
        "bench": cmd_bench,
    }
    for name, fn in commands.items():
        p = sub.add_parser(name)
        p.add_argument("--config", default="", help="flat key=value file")
        p.add_argument("--data", default="", help="dataset CSV")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--checkpoint", default="",
                       help="checkpoint path (default: <out>/checkpoint.npz)")
        if name == "bench":
            p.add_argument("--lengths", default="384,768,1536,3072")
        p.set_defaults(fn=fn)
    args = parser.parse_args(argv)
    try:
        args.fn(args)
    except DemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
