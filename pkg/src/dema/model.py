"""Dual-path block composition, backbone, task heads and checkpoints.

One block runs the temporal path on the time-major grid and the variate
path on the variate-major grid, feeds each path's residual (input minus
output) to the next block, and fuses the two outputs into the block
representation. The backbone output is the sum of block representations.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .dala import DalaParams, RotaryTable, mamba_dala_forward
from .delay import DelayPriors, default_max_lag, delay_matrix
from .embedding import (InstanceStats, PatchEncoder, TIME_MAJOR, TokenGrid,
                        VARIATE_MAJOR, embed_patches, patch_count, patchify,
                        revin_denormalize, revin_normalize, to_time_major)
from .errors import ConfigError, ContractError
from .spectral import decompose
from .ssd import SsdParams, mamba_ssd_forward

CHECKPOINT_VERSION = 1

TASKS = ("forecast", "impute", "anomaly", "classify")


@dataclass
class ModelConfig:
    task: str = "forecast"
    lookback: int = 96
    horizon: int = 96
    n_classes: int = 0
    d_model: int = 64
    d_state: int = 16
    expand: int = 2
    n_blocks: int = 2
    patch_len: int = 8
    stride: int = 8
    theta: float = 0.4
    alpha: float = 0.6
    beta: float = 0.4
    chunk: int = 16
    conv_size: int = 4
    kernel_power: int = 3
    rotated_denominator: bool = False
    max_lag: int = 0  # 0 -> lookback // 4
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.task == "classify" and self.n_classes < 2:
            raise ConfigError("classification needs at least 2 classes")
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ConfigError("fusion weights must lie in [0, 1]")
        if self.n_blocks < 1:
            raise ConfigError("need at least one block")

    @property
    def d_inner(self) -> int:
        return self.expand * self.d_model

    @property
    def n_tokens(self) -> int:
        return patch_count(self.lookback, self.patch_len, self.stride)

    def lag_bound(self) -> int:
        return self.max_lag if self.max_lag > 0 else default_max_lag(self.lookback)


@dataclass
class LayerNormParams:
    gamma: T.Tensor
    beta: T.Tensor

    @staticmethod
    def init(D: int) -> "LayerNormParams":
        return LayerNormParams(T.Tensor(np.ones(D), requires_grad=True),
                               T.Tensor(np.zeros(D), requires_grad=True))

    def __call__(self, x):
        return T.layer_norm(x, self.gamma, self.beta)

    def parameters(self, prefix: str):
        return [(f"{prefix}.gamma", self.gamma), (f"{prefix}.beta", self.beta)]


@dataclass
class FfnParams:
    w1: T.Tensor
    b1: T.Tensor
    w2: T.Tensor
    b2: T.Tensor

    @staticmethod
    def init(D: int, rng: np.random.Generator) -> "FfnParams":
        hidden = 4 * D
        return FfnParams(
            w1=T.Tensor(rng.normal(0, 1 / np.sqrt(D), (D, hidden)),
                        requires_grad=True),
            b1=T.Tensor(np.zeros(hidden), requires_grad=True),
            w2=T.Tensor(rng.normal(0, 1 / np.sqrt(hidden), (hidden, D)),
                        requires_grad=True),
            b2=T.Tensor(np.zeros(D), requires_grad=True),
        )

    def __call__(self, x):
        h = T.gelu(T.add(T.matmul(x, self.w1), self.b1))
        return T.add(T.matmul(h, self.w2), self.b2)

    def parameters(self, prefix: str):
        return [(f"{prefix}.{n}", getattr(self, n))
                for n in ("w1", "b1", "w2", "b2")]


@dataclass
class DuoMNetBlockParams:
    ssd: SsdParams
    dala: DalaParams
    ln_time: LayerNormParams
    ln_var: LayerNormParams
    ln_out: LayerNormParams
    ffn: FfnParams
    alpha: float
    beta: float

    @staticmethod
    def init(cfg: ModelConfig, rng: np.random.Generator) -> "DuoMNetBlockParams":
        D, Du, Dh = cfg.d_model, cfg.d_inner, cfg.d_state
        return DuoMNetBlockParams(
            ssd=SsdParams.init(D, Du, Dh, rng, conv_size=cfg.conv_size,
                               chunk=cfg.chunk),
            dala=DalaParams.init(D, Du, rng, kernel_power=cfg.kernel_power,
                                 rotated_denominator=cfg.rotated_denominator),
            ln_time=LayerNormParams.init(D),
            ln_var=LayerNormParams.init(D),
            ln_out=LayerNormParams.init(D),
            ffn=FfnParams.init(D, rng),
            alpha=cfg.alpha,
            beta=cfg.beta,
        )

    def parameters(self, prefix: str):
        out = []
        out += self.ssd.parameters(f"{prefix}.ssd")
        out += self.dala.parameters(f"{prefix}.dala")
        out += self.ln_time.parameters(f"{prefix}.ln_time")
        out += self.ln_var.parameters(f"{prefix}.ln_var")
        out += self.ln_out.parameters(f"{prefix}.ln_out")
        out += self.ffn.parameters(f"{prefix}.ffn")
        return out


def duomnet_block(x_time: TokenGrid, x_var: TokenGrid, priors: DelayPriors,
                  params: DuoMNetBlockParams,
                  table: RotaryTable | None = None):
    """One dual-path layer. Returns (next time grid, next var grid, Z_b)."""
    if x_time.layout != TIME_MAJOR or x_var.layout != VARIATE_MAJOR:
        raise ContractError("block expects (time-major, variate-major) inputs")
    y_time = mamba_ssd_forward(x_time, params.ssd)
    y_var = mamba_dala_forward(x_var, priors, params.dala, table=table)
    next_time = TokenGrid(TIME_MAJOR, T.sub(x_time.tokens, y_time.tokens),
                          x_time.patch_len, x_time.stride)
    next_var = TokenGrid(VARIATE_MAJOR, T.sub(x_var.tokens, y_var.tokens),
                         x_var.patch_len, x_var.stride)
    y_var_tm = to_time_major(y_var).tokens
    mixed = T.add(T.mul(params.ln_time(y_time.tokens), params.alpha),
                  T.mul(params.ln_var(y_var_tm), params.beta))
    z_b = params.ln_out(T.add(mixed, params.ffn(mixed)))
    return next_time, next_var, z_b


@dataclass
class ModelState:
    config: ModelConfig
    encoder_time: PatchEncoder
    encoder_var: PatchEncoder
    blocks: list
    head_w: T.Tensor
    head_b: T.Tensor

    @staticmethod
    def init(config: ModelConfig) -> "ModelState":
        rng = np.random.default_rng(config.seed)
        D = config.d_model
        L = config.n_tokens
        if config.task == "forecast":
            n_out = config.horizon
            n_in = L * D
        elif config.task in ("impute", "anomaly"):
            n_out = config.lookback
            n_in = L * D
        else:
            n_out = config.n_classes
            n_in = D
        return ModelState(
            config=config,
            encoder_time=PatchEncoder.init(config.patch_len, D, rng),
            encoder_var=PatchEncoder.init(config.patch_len, D, rng),
            blocks=[DuoMNetBlockParams.init(config, rng)
                    for _ in range(config.n_blocks)],
            head_w=T.Tensor(rng.normal(0, 1 / np.sqrt(n_in), (n_in, n_out)),
                            requires_grad=True),
            head_b=T.Tensor(np.zeros(n_out), requires_grad=True),
        )

    def parameters(self):
        out = []
        out += self.encoder_time.parameters("encoder_time")
        out += self.encoder_var.parameters("encoder_var")
        for i, blk in enumerate(self.blocks):
            out += blk.parameters(f"block{i}")
        out += [("head.w", self.head_w), ("head.b", self.head_b)]
        return out

    def zero_grad(self):
        for _, p in self.parameters():
            p.zero_grad()


@dataclass
class BackboneOutput:
    Z: T.Tensor                    # [..., N, L, D]
    stats: InstanceStats
    per_block: list | None = None  # Z^b when tracing
    priors: DelayPriors | None = None


def _tokenize(window: np.ndarray, state: ModelState):
    """RevIN -> spectral split -> patchify -> embed both components."""
    cfg = state.config
    normalized, stats = revin_normalize(window)
    if normalized.ndim == 2:
        split = decompose(normalized, cfg.theta)
        ct, cv = split.cross_time, split.cross_variate
    else:
        cts, cvs = [], []
        for w in normalized:
            split = decompose(w, cfg.theta)
            cts.append(split.cross_time)
            cvs.append(split.cross_variate)
        ct, cv = np.stack(cts), np.stack(cvs)
    p_time = patchify(ct, cfg.patch_len, cfg.stride)
    p_var = patchify(cv, cfg.patch_len, cfg.stride)
    g_time = embed_patches(p_time, state.encoder_time, cfg.patch_len, cfg.stride)
    g_var_tm = embed_patches(p_var, state.encoder_var, cfg.patch_len, cfg.stride)
    g_var = TokenGrid(VARIATE_MAJOR, T.swapaxes(g_var_tm.tokens, -3, -2),
                      cfg.patch_len, cfg.stride)
    return g_time, g_var, stats


def backbone_forward(window: np.ndarray, state: ModelState,
                     priors: DelayPriors | None = None,
                     trace: bool = False) -> BackboneOutput:
    """Run the stacked blocks on one window [N, T] or a batch [G, N, T].

    Delay priors default to per-window estimation from the raw values; a
    precomputed `priors` is shared across the whole batch.
    """
    window = np.asarray(window, dtype=np.float64)
    cfg = state.config
    if window.shape[-1] != cfg.lookback:
        raise ContractError(
            f"window length {window.shape[-1]} != lookback {cfg.lookback}")
    if priors is None and window.ndim == 3:
        # per-window priors differ, so windows cannot share one attention
        # shift pattern; run them one by one and stitch the outputs
        outs = [backbone_forward(w, state, None, trace) for w in window]
        Z = T.concat([T.reshape(o.Z, (1,) + o.Z.shape) for o in outs], axis=0)
        stats = InstanceStats(
            mean=np.stack([o.stats.mean for o in outs]),
            std=np.stack([o.stats.std for o in outs]),
        )
        per_block = None
        if trace:
            per_block = [
                T.concat([T.reshape(o.per_block[i], (1,) + o.per_block[i].shape)
                          for o in outs], axis=0)
                for i in range(cfg.n_blocks)
            ]
        return BackboneOutput(Z=Z, stats=stats, per_block=per_block)
    if priors is None:
        priors = delay_matrix(window, cfg.lag_bound(), cfg.patch_len)
    g_time, g_var, stats = _tokenize(window, state)
    table = RotaryTable(dim=cfg.d_inner, max_position=max(cfg.n_tokens, 1))
    z_sum = None
    per_block = [] if trace else None
    for blk in state.blocks:
        g_time, g_var, z_b = duomnet_block(g_time, g_var, priors, blk, table)
        z_sum = z_b if z_sum is None else T.add(z_sum, z_b)
        if trace:
            per_block.append(z_b)
    return BackboneOutput(Z=z_sum, stats=stats, per_block=per_block,
                          priors=priors)


# ----------------------------------------------------------------------
# task heads
# ----------------------------------------------------------------------

def head_forecast(Z: T.Tensor, stats: InstanceStats, state: ModelState):
    """[..., N, L, D] -> denormalized [..., N, S]."""
    flat = T.reshape(Z, Z.shape[:-2] + (Z.shape[-2] * Z.shape[-1],))
    pred = T.add(T.matmul(flat, state.head_w), state.head_b)
    return revin_denormalize(pred, stats)


def head_pointwise(Z: T.Tensor, stats: InstanceStats, state: ModelState):
    """[..., N, L, D] -> denormalized [..., N, T]."""
    flat = T.reshape(Z, Z.shape[:-2] + (Z.shape[-2] * Z.shape[-1],))
    pred = T.add(T.matmul(flat, state.head_w), state.head_b)
    return revin_denormalize(pred, stats)


def head_classify(Z: T.Tensor, state: ModelState):
    """[..., N, L, D] -> class probabilities [..., C]."""
    if state.config.n_classes < 2:
        raise ConfigError("classification needs at least 2 classes")
    pooled = T.tmean(T.tmean(Z, axis=-2), axis=-2)  # over L then N
    logits = T.add(T.matmul(T.reshape(pooled, pooled.shape[:-1] + (1, pooled.shape[-1])),
                            state.head_w), state.head_b)
    logits = T.reshape(logits, logits.shape[:-2] + (logits.shape[-1],))
    return T.softmax(logits, axis=-1)


def model_forward(window: np.ndarray, state: ModelState,
                  priors: DelayPriors | None = None):
    """Backbone plus the task head configured in `state`."""
    out = backbone_forward(window, state, priors=priors)
    task = state.config.task
    if task == "forecast":
        return head_forecast(out.Z, out.stats, state)
    if task in ("impute", "anomaly"):
        return head_pointwise(out.Z, out.stats, state)
    return head_classify(out.Z, state)


# ----------------------------------------------------------------------
# anomaly criterion
# ----------------------------------------------------------------------

def anomaly_score(x: np.ndarray, x_recon: np.ndarray) -> np.ndarray:
    """Per-timestep mean squared reconstruction error over variates."""
    x = np.asarray(x, dtype=np.float64)
    x_recon = np.asarray(x_recon, dtype=np.float64)
    if x.shape != x_recon.shape:
        raise ContractError("score inputs must have identical shapes")
    return ((x - x_recon) ** 2).mean(axis=-2)


def select_threshold(scores_train: np.ndarray, ratio: float) -> float:
    """(1 - ratio)-quantile of training scores."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError("anomaly ratio must lie in (0, 1)")
    return float(np.quantile(np.asarray(scores_train, dtype=np.float64).ravel(),
                             1.0 - ratio))


# ----------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------

def save_checkpoint(state: ModelState, path) -> None:
    """Write config + all parameter tensors to a .npz container."""
    arrays = {f"param/{name}": p.data for name, p in state.parameters()}
    arrays["__version__"] = np.array(CHECKPOINT_VERSION)
    arrays["__config__"] = np.frombuffer(
        json.dumps(asdict(state.config)).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path) -> ModelState:
    with np.load(path) as z:
        version = int(z["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ContractError(f"unsupported checkpoint version {version}")
        cfg = ModelConfig(**json.loads(bytes(z["__config__"]).decode()))
        state = ModelState.init(cfg)
        for name, p in state.parameters():
            key = f"param/{name}"
            if key not in z:
                raise ContractError(f"checkpoint missing parameter {name}")
            p.data = np.array(z[key], dtype=np.float64)
    return state
