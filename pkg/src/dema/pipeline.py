"""Data ingestion, windowing, training loop, metrics and scaling benchmark.

CSV convention: header row, first column is a timestamp (ignored), the
remaining columns are numeric variates. A final column whose header is
``label`` is split off and used as per-timestep labels for the anomaly
and classification tasks.
"""

from __future__ import annotations

import csv
import json
import math
import time
import tracemalloc
import warnings
from dataclasses import dataclass, fields

import numpy as np

from . import tensor as T
from .delay import delay_matrix, default_max_lag
from .errors import ConfigError, ContractError, FormatError
from .model import (ModelConfig, ModelState, anomaly_score, backbone_forward,
                    model_forward, select_threshold)

LABEL_COLUMN = "label"


@dataclass
class DatasetSpec:
    path: str = ""
    train_ratio: float = 0.7
    val_ratio: float = 0.1
    test_ratio: float = 0.2
    lookback: int = 96
    horizon: int = 96
    task: str = "forecast"
    mask_ratio: float = 0.25
    anomaly_ratio: float = 0.01
    n_classes: int = 0


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0
    theta: float = 0.4
    patch_len: int = 8
    stride: int = 8
    alpha: float = 0.6
    beta: float = 0.4
    n_blocks: int = 2
    d_model: int = 32
    d_state: int = 16
    expand: int = 2
    chunk: int = 16
    kernel_power: int = 3
    max_lag: int = 0
    global_priors: bool = True
    rotated_denominator: bool = False
    point_adjust: bool = False
    n_variates: int = 7  # bench only
    checkpoint: str = ""

    def __post_init__(self):
        for name in ("lr", "batch_size", "epochs", "d_model", "n_blocks",
                     "patch_len", "stride"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")


def model_config(train: TrainConfig, spec: DatasetSpec) -> ModelConfig:
    return ModelConfig(
        task=spec.task,
        lookback=spec.lookback,
        horizon=spec.horizon,
        n_classes=spec.n_classes,
        d_model=train.d_model,
        d_state=train.d_state,
        expand=train.expand,
        n_blocks=train.n_blocks,
        patch_len=train.patch_len,
        stride=train.stride,
        theta=train.theta,
        alpha=train.alpha,
        beta=train.beta,
        chunk=train.chunk,
        kernel_power=train.kernel_power,
        rotated_denominator=train.rotated_denominator,
        max_lag=train.max_lag,
        seed=train.seed,
    )


# ----------------------------------------------------------------------
# config file: flat key=value text
# ----------------------------------------------------------------------

def parse_config_file(path) -> tuple[TrainConfig, DatasetSpec]:
    """Parse a flat key=value file; unknown keys are an error."""
    train_fields = {f.name: f.type for f in fields(TrainConfig)}
    spec_fields = {f.name: f.type for f in fields(DatasetSpec)}
    train_kwargs, spec_kwargs = {}, {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key in train_fields:
                train_kwargs[key] = _coerce(value, TrainConfig, key)
            elif key in spec_fields:
                spec_kwargs[key] = _coerce(value, DatasetSpec, key)
            else:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
    return TrainConfig(**train_kwargs), DatasetSpec(**spec_kwargs)


def _coerce(value: str, cls, key):
    default = next(f.default for f in fields(cls) if f.name == key)
    if isinstance(default, bool):
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


# ----------------------------------------------------------------------
# dataset loading and windowing
# ----------------------------------------------------------------------

@dataclass
class DatasetSplits:
    train: np.ndarray  # [N, T_train], z-scored with train statistics
    val: np.ndarray
    test: np.ndarray
    scaler_mean: np.ndarray  # per-variate, raw units
    scaler_std: np.ndarray
    labels: dict | None = None  # split -> [T_split] when a label column exists
    columns: list | None = None


def load_csv_dataset(spec: DatasetSpec) -> DatasetSplits:
    """Load, validate, chronologically split and z-score a variate CSV."""
    with open(spec.path, newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise FormatError(f"{spec.path}: empty file")
    header = rows[0]
    if len(header) < 2:
        raise FormatError(f"{spec.path}: need a timestamp column plus at "
                          "least one variate column")
    width = len(header)
    has_labels = header[-1].strip().lower() == LABEL_COLUMN
    values = []
    labels = []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise FormatError(
                f"{spec.path}: row {r} has {len(row)} cells, expected {width}")
        parsed = []
        for c, cell in enumerate(row[1:], start=2):
            try:
                x = float(cell)
            except ValueError:
                raise FormatError(
                    f"{spec.path}: non-numeric value at row {r}, col {c}")
            if math.isnan(x):
                raise FormatError(
                    f"{spec.path}: NaN at row {r}, col {c}")
            parsed.append(x)
        if has_labels:
            labels.append(int(parsed[-1]))
            parsed = parsed[:-1]
        values.append(parsed)
    data = np.asarray(values, dtype=np.float64).T  # [N, T]
    if data.shape[0] < 1:
        raise FormatError(f"{spec.path}: no variate columns")
    total = data.shape[1]
    n_train = int(total * spec.train_ratio)
    n_val = int(total * spec.val_ratio)
    if n_train < 1 or total - n_train - n_val < 1:
        raise FormatError(f"{spec.path}: too few rows for the split ratios")
    mean = data[:, :n_train].mean(axis=1)
    std = np.maximum(data[:, :n_train].std(axis=1), 1e-8)
    z = (data - mean[:, None]) / std[:, None]
    split_labels = None
    if has_labels:
        arr = np.asarray(labels, dtype=np.int64)
        split_labels = {
            "train": arr[:n_train],
            "val": arr[n_train:n_train + n_val],
            "test": arr[n_train + n_val:],
        }
    return DatasetSplits(
        train=z[:, :n_train],
        val=z[:, n_train:n_train + n_val],
        test=z[:, n_train + n_val:],
        scaler_mean=mean,
        scaler_std=std,
        labels=split_labels,
        columns=[h for h in header[1:] if h.strip().lower() != LABEL_COLUMN],
    )


def make_windows(split: np.ndarray, lookback: int, horizon: int, task: str,
                 labels: np.ndarray | None = None):
    """Stride-1 sliding (input, target) pairs for one split."""
    split = np.atleast_2d(np.asarray(split, dtype=np.float64))
    total = split.shape[1]
    need = lookback + (horizon if task == "forecast" else 0)
    if total < need:
        warnings.warn(f"split of length {total} yields no windows "
                      f"(need {need})", stacklevel=2)
        return []
    out = []
    for i in range(total - need + 1):
        x = split[:, i:i + lookback]
        if task == "forecast":
            y = split[:, i + lookback:i + lookback + horizon]
        elif task in ("impute", "anomaly"):
            y = x
        elif task == "classify":
            if labels is None:
                raise ContractError("classification windows need labels")
            y = int(labels[i + lookback - 1])
        else:
            raise ConfigError(f"unknown task {task!r}")
        out.append((x, y))
    return out


def apply_mask(window: np.ndarray, ratio: float, seed: int):
    """Zero a seeded uniform random subset of points; return (masked, mask)."""
    window = np.asarray(window, dtype=np.float64)
    n_mask = int(ratio * window.size)
    rng = np.random.default_rng(seed)
    flat_idx = rng.choice(window.size, size=n_mask, replace=False)
    mask = np.zeros(window.size, dtype=bool)
    mask[flat_idx] = True
    mask = mask.reshape(window.shape)
    masked = np.where(mask, 0.0, window)
    return masked, mask


# ----------------------------------------------------------------------
# optimizer
# ----------------------------------------------------------------------

class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)  # [(name, Tensor)]
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / (1 - b1 ** self.t)
            v_hat = self.v[name] / (1 - b2 ** self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for _, p in self.params:
            p.zero_grad()


# ----------------------------------------------------------------------
# training and evaluation
# ----------------------------------------------------------------------

@dataclass
class TrainResult:
    state: ModelState
    log: list  # per-epoch dicts with train/val loss
    best_epoch: int
    diverged: bool = False


def _batch_loss(state: ModelState, xs, ys, task, priors, mask_seed=None,
                mask_ratio=0.0):
    x = np.stack(xs)
    if task == "forecast":
        pred = model_forward(x, state, priors)
        target = np.stack(ys)
        diff = T.sub(pred, target)
        return T.tmean(T.mul(diff, diff))
    if task == "impute":
        masked, masks = [], []
        for i, xi in enumerate(xs):
            m_x, m = apply_mask(xi, mask_ratio, mask_seed + i)
            masked.append(m_x)
            masks.append(m)
        pred = model_forward(np.stack(masked), state, priors)
        target = np.stack(ys)
        mask = np.stack(masks).astype(np.float64)
        diff = T.mul(T.sub(pred, target), mask)
        denom = max(mask.sum(), 1.0)
        return T.div(T.tsum(T.mul(diff, diff)), denom)
    if task == "anomaly":
        pred = model_forward(x, state, priors)
        target = np.stack(ys)
        diff = T.sub(pred, target)
        return T.tmean(T.mul(diff, diff))
    if task == "classify":
        probs = model_forward(x, state, priors)
        onehot = np.zeros(probs.shape)
        for i, yi in enumerate(ys):
            onehot[i, int(yi)] = 1.0
        diff = T.sub(probs, onehot)
        return T.tmean(T.mul(diff, diff))
    raise ConfigError(f"unknown task {task!r}")


def shared_priors(splits: DatasetSplits, cfg: ModelConfig):
    """Delay priors estimated once from the train split (global cache)."""
    window = splits.train[:, -cfg.lookback * 4:]
    max_lag = cfg.max_lag if cfg.max_lag > 0 else default_max_lag(cfg.lookback)
    max_lag = min(max_lag, window.shape[1] - 4)
    return delay_matrix(window, max_lag, cfg.patch_len)


def train(config: TrainConfig, spec: DatasetSpec,
          splits: DatasetSplits | None = None,
          priors_override=None) -> TrainResult:
    """Adam/MSE training with best-validation checkpoint selection."""
    if splits is None:
        splits = load_csv_dataset(spec)
    cfg = model_config(config, spec)
    state = ModelState.init(cfg)
    rng = np.random.default_rng(config.seed)
    task = spec.task
    labels = splits.labels or {}
    train_windows = make_windows(splits.train, cfg.lookback, cfg.horizon,
                                 task, labels.get("train"))
    val_windows = make_windows(splits.val, cfg.lookback, cfg.horizon,
                               task, labels.get("val"))
    if not train_windows:
        raise ContractError("train split yields no windows")
    if priors_override is not None:
        priors = priors_override
    elif config.global_priors:
        priors = shared_priors(splits, cfg)
    else:
        priors = None
    opt = Adam(state.parameters(), lr=config.lr)
    log = []
    best_val = np.inf
    best_params = None
    best_epoch = -1
    diverged = False
    n = len(train_windows)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        train_losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xs = [train_windows[i][0] for i in idx]
            ys = [train_windows[i][1] for i in idx]
            opt.zero_grad()
            loss = _batch_loss(state, xs, ys, task, priors,
                               mask_seed=config.seed * 100003 + epoch * 1009 + start,
                               mask_ratio=spec.mask_ratio)
            if not np.isfinite(loss.data):
                diverged = True
                break
            T.backward(loss)
            opt.step()
            train_losses.append(float(loss.data))
        if diverged:
            warnings.warn(f"loss diverged at epoch {epoch}; keeping the "
                          "last good checkpoint", stacklevel=2)
            break
        val_loss = _epoch_loss(state, val_windows, task, priors, config, spec)
        entry = {"epoch": epoch,
                 "train_loss": float(np.mean(train_losses)),
                 "val_loss": val_loss}
        log.append(entry)
        if val_loss <= best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = {name: p.data.copy() for name, p in state.parameters()}
    if best_params is not None:
        for name, p in state.parameters():
            p.data = best_params[name]
    return TrainResult(state=state, log=log, best_epoch=best_epoch,
                       diverged=diverged)


def _epoch_loss(state, windows, task, priors, config, spec):
    if not windows:
        return float("nan")
    losses = []
    with T.no_grad():
        for start in range(0, len(windows), config.batch_size):
            chunk_ws = windows[start:start + config.batch_size]
            xs = [w[0] for w in chunk_ws]
            ys = [w[1] for w in chunk_ws]
            loss = _batch_loss(state, xs, ys, task, priors,
                               mask_seed=config.seed * 7919 + start,
                               mask_ratio=spec.mask_ratio)
            losses.append((float(loss.data), len(chunk_ws)))
    total = sum(n for _, n in losses)
    return float(sum(l * n for l, n in losses) / total)


def evaluate(state: ModelState, spec: DatasetSpec,
             splits: DatasetSplits | None = None,
             config: TrainConfig | None = None,
             priors_override=None) -> dict:
    """Task metrics on the test split, as a flat numeric map."""
    if splits is None:
        splits = load_csv_dataset(spec)
    config = config or TrainConfig()
    cfg = state.config
    if cfg.task != spec.task:
        raise ContractError(
            f"checkpoint was trained for {cfg.task!r}, dataset says "
            f"{spec.task!r}")
    labels = splits.labels or {}
    if priors_override is not None:
        priors = priors_override
    elif config.global_priors:
        priors = shared_priors(splits, cfg)
    else:
        priors = None
    test_windows = make_windows(splits.test, cfg.lookback, cfg.horizon,
                                spec.task, labels.get("test"))
    if not test_windows:
        raise ContractError("test split yields no windows")
    task = spec.task
    with T.no_grad():
        if task == "forecast":
            err_sq, err_abs, count = 0.0, 0.0, 0
            for start in range(0, len(test_windows), config.batch_size):
                batch = test_windows[start:start + config.batch_size]
                x = np.stack([w[0] for w in batch])
                y = np.stack([w[1] for w in batch])
                pred = model_forward(x, state, priors).data
                err_sq += float(((pred - y) ** 2).sum())
                err_abs += float(np.abs(pred - y).sum())
                count += y.size
            return {"mse": err_sq / count, "mae": err_abs / count}
        if task == "impute":
            err_sq, err_abs, count = 0.0, 0.0, 0
            for i, (x, y) in enumerate(test_windows):
                masked, mask = apply_mask(x, spec.mask_ratio, 10_000 + i)
                pred = model_forward(masked, state, priors).data
                d = (pred - y)[mask]
                err_sq += float((d ** 2).sum())
                err_abs += float(np.abs(d).sum())
                count += d.size
            return {"mse": err_sq / max(count, 1),
                    "mae": err_abs / max(count, 1)}
        if task == "classify":
            correct = 0
            for x, y in test_windows:
                probs = model_forward(x, state, priors).data
                correct += int(np.argmax(probs) == int(y))
            return {"accuracy": correct / len(test_windows)}
        # anomaly: threshold from train-split scores, F1 on the test split
        recon_scores = _reconstruction_scores(state, splits.train, priors)
        threshold = select_threshold(recon_scores, spec.anomaly_ratio)
        test_scores = _reconstruction_scores(state, splits.test, priors)
        test_labels = labels.get("test")
        flags = test_scores > threshold
        out = {"threshold": threshold,
               "flagged_fraction": float(flags.mean())}
        if test_labels is not None:
            truth = test_labels[:flags.size].astype(bool)
            if config.point_adjust:
                flags = _point_adjust(flags, truth)
            out.update(_prf(flags, truth))
        return out


def _reconstruction_scores(state, split, priors):
    """Anomaly scores over a split via non-overlapping lookback windows."""
    cfg = state.config
    Tw = cfg.lookback
    total = split.shape[1]
    scores = []
    for start in range(0, total - Tw + 1, Tw):
        x = split[:, start:start + Tw]
        recon = model_forward(x, state, priors).data
        scores.append(anomaly_score(x, recon))
    if not scores:
        raise ContractError("split shorter than one lookback window")
    return np.concatenate(scores)


def _point_adjust(flags: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Mark a whole true anomaly segment detected if any point inside is."""
    flags = flags.copy()
    i = 0
    n = truth.size
    while i < n:
        if truth[i]:
            j = i
            while j < n and truth[j]:
                j += 1
            if flags[i:j].any():
                flags[i:j] = True
            i = j
        else:
            i += 1
    return flags


def _prf(flags: np.ndarray, truth: np.ndarray) -> dict:
    tp = float((flags & truth).sum())
    fp = float((flags & ~truth).sum())
    fn = float((~flags & truth).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall else 0.0)
    return {"precision": precision, "recall": recall, "f1": f1}


# ----------------------------------------------------------------------
# scaling benchmark
# ----------------------------------------------------------------------

def bench_scaling(lengths, config: TrainConfig, repeats: int = 5):
    """Median forward wall time and peak allocation per lookback length.

    Delay priors are computed once per length outside the timed region so
    the measurement isolates the backbone forward pass.
    """
    lengths = list(lengths)
    if lengths != sorted(lengths):
        raise ContractError("lengths must be ascending")
    rows = []
    rng = np.random.default_rng(config.seed)
    for T_len in lengths:
        spec = DatasetSpec(lookback=T_len, horizon=config.patch_len,
                           task="forecast")
        cfg = model_config(config, spec)
        state = ModelState.init(cfg)
        window = rng.standard_normal((config.n_variates, T_len))
        max_lag = config.max_lag if config.max_lag > 0 else config.patch_len * 12
        priors = delay_matrix(window, min(max_lag, T_len - 4), cfg.patch_len)
        times = []
        with T.no_grad():
            backbone_forward(window, state, priors)  # warm-up
            for _ in range(repeats):
                t0 = time.perf_counter()
                backbone_forward(window, state, priors)
                times.append((time.perf_counter() - t0) * 1000.0)
            tracemalloc.start()
            backbone_forward(window, state, priors)
            _, peak = tracemalloc.get_traced_memory()
            tracemalloc.stop()
        rows.append({"T": T_len, "ms": float(np.median(times)),
                     "bytes": int(peak)})
    return rows


# ----------------------------------------------------------------------
# output helpers
# ----------------------------------------------------------------------

def write_metrics(metrics: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump({k: float(v) for k, v in metrics.items()}, fh, indent=2)
        fh.write("\n")


def write_predictions(pred: np.ndarray, path, columns=None) -> None:
    """One row per timestep, one column per variate; pred is [N, T]."""
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if columns:
            writer.writerow(columns)
        for t in range(pred.shape[1]):
            writer.writerow([f"{v:.10g}" for v in pred[:, t]])


def write_bench(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["T", "ms", "bytes"])
        for row in rows:
            writer.writerow([row["T"], f"{row['ms']:.3f}", row["bytes"]])
