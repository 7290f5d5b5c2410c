"""Instance normalization, patch tokenization and the two scan layouts.

Windows are [N, T] (optionally with leading batch axes). Patch tokens are
kept either time-major [..., N, L, D] for the temporal path or
variate-major [..., L, N, D] for the variate path; conversion between the
two is a pure axis permutation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError

TIME_MAJOR = "time_major"      # [..., N, L, D]
VARIATE_MAJOR = "variate_major"  # [..., L, N, D]

REVIN_EPS = 1e-5


@dataclass
class InstanceStats:
    mean: np.ndarray  # [..., N]
    std: np.ndarray   # [..., N], >= eps
    eps: float = REVIN_EPS


@dataclass
class TokenGrid:
    layout: str
    tokens: T.Tensor
    patch_len: int
    stride: int

    @property
    def n_variates(self) -> int:
        return self.tokens.shape[-2 if self.layout == VARIATE_MAJOR else -3]

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[-3 if self.layout == VARIATE_MAJOR else -2]


def revin_normalize(window: np.ndarray, eps: float = REVIN_EPS):
    """Per-variate zero-mean/unit-std normalization over the window."""
    window = np.asarray(window, dtype=np.float64)
    mean = window.mean(axis=-1)
    std = np.maximum(window.std(axis=-1), eps)
    normalized = (window - mean[..., None]) / std[..., None]
    return normalized, InstanceStats(mean=mean, std=std, eps=eps)


def revin_denormalize(y, stats: InstanceStats):
    """Invert :func:`revin_normalize` on values aligned per variate.

    `y` is [..., N, M] (numpy array or Tensor); the trailing axis is free.
    """
    if isinstance(y, T.Tensor):
        return T.add(T.mul(y, stats.std[..., None]), stats.mean[..., None])
    return y * stats.std[..., None] + stats.mean[..., None]


def patch_count(T_len: int, P: int, S: int) -> int:
    """Token count after the right-replication padding policy."""
    if P < 1 or S < 1:
        raise ConfigError("patch length and stride must be >= 1")
    if P > T_len:
        raise ConfigError(f"patch length {P} exceeds window length {T_len}")
    return (T_len - P + S - 1) // S + 1


def patchify(window: np.ndarray, P: int, S: int) -> np.ndarray:
    """Slice a window into patches [..., N, L, P].

    When (T - P) is not a stride multiple the window is right-padded by
    replicating the last value so every patch is full length.
    """
    window = np.asarray(window, dtype=np.float64)
    T_len = window.shape[-1]
    L = patch_count(T_len, P, S)
    T_padded = (L - 1) * S + P
    if T_padded > T_len:
        pad = np.repeat(window[..., -1:], T_padded - T_len, axis=-1)
        window = np.concatenate([window, pad], axis=-1)
    idx = np.arange(L)[:, None] * S + np.arange(P)[None, :]
    return window[..., idx]


@dataclass
class PatchEncoder:
    """Linear map from a length-P patch to a D-dim embedding."""

    weight: T.Tensor  # [P, D]
    bias: T.Tensor    # [D]

    @staticmethod
    def init(P: int, D: int, rng: np.random.Generator) -> "PatchEncoder":
        w = rng.normal(0.0, 1.0 / np.sqrt(P), size=(P, D))
        return PatchEncoder(
            weight=T.Tensor(w, requires_grad=True),
            bias=T.Tensor(np.zeros(D), requires_grad=True),
        )

    def parameters(self, prefix: str):
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]


def embed_patches(patches: np.ndarray, encoder: PatchEncoder,
                  patch_len: int, stride: int) -> TokenGrid:
    """Embed patches [..., N, L, P] into a time-major token grid."""
    tokens = T.add(T.matmul(T.Tensor(patches), encoder.weight), encoder.bias)
    return TokenGrid(layout=TIME_MAJOR, tokens=tokens,
                     patch_len=patch_len, stride=stride)


def to_variate_major(grid: TokenGrid) -> TokenGrid:
    if grid.layout == VARIATE_MAJOR:
        return grid
    return TokenGrid(layout=VARIATE_MAJOR,
                     tokens=T.swapaxes(grid.tokens, -3, -2),
                     patch_len=grid.patch_len, stride=grid.stride)


def to_time_major(grid: TokenGrid) -> TokenGrid:
    if grid.layout == TIME_MAJOR:
        return grid
    return TokenGrid(layout=TIME_MAJOR,
                     tokens=T.swapaxes(grid.tokens, -3, -2),
                     patch_len=grid.patch_len, stride=grid.stride)
