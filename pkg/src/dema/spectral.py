"""Frequency-domain split of a lookback window into two complementary parts.

Frequencies are ranked by amplitude averaged over variates; the top
fraction forms the cross-time component and the remainder the
cross-variate component. The split is lossless by linearity of the FFT.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from .tensor import irfft, rfft


@dataclass
class SpectralSplit:
    cross_time: np.ndarray   # [N, T]
    cross_variate: np.ndarray  # [N, T]
    selected: tuple[int, ...]  # sorted frequency indices kept in cross_time
    theta: float


def amplitude_rank(window: np.ndarray, theta: float) -> tuple[int, ...]:
    """Indices of the strongest frequencies, averaged over variates.

    Keeps ceil(theta * (T//2 + 1)) indices (at least one). Ties break
    toward the lower frequency index.
    """
    if theta <= 0 or theta > 1:
        raise ConfigError(f"theta must be in (0, 1], got {theta}")
    window = np.atleast_2d(np.asarray(window, dtype=np.float64))
    spec = rfft(window)
    amp = np.abs(spec.coeffs).mean(axis=0)
    n_bins = amp.shape[0]
    count = max(1, math.ceil(theta * n_bins))
    # stable sort on -amp keeps lower indices first among ties
    order = np.argsort(-amp, kind="stable")
    return tuple(sorted(int(i) for i in order[:count]))


def decompose(window: np.ndarray, theta: float) -> SpectralSplit:
    """Split a window into kept-frequency and residual-frequency parts."""
    window = np.atleast_2d(np.asarray(window, dtype=np.float64))
    _, T = window.shape
    selected = amplitude_rank(window, theta)
    spec = rfft(window)
    mask = np.zeros(spec.coeffs.shape[-1])
    mask[list(selected)] = 1.0
    kept = type(spec)(length=T, coeffs=spec.coeffs * mask)
    rest = type(spec)(length=T, coeffs=spec.coeffs * (1.0 - mask))
    return SpectralSplit(
        cross_time=irfft(kept, T),
        cross_variate=irfft(rest, T),
        selected=selected,
        theta=theta,
    )


def support_overlap(u: np.ndarray, v: np.ndarray, basis: np.ndarray,
                    tol: float = 1e-12) -> bool:
    """Whether u and v have intersecting coefficient supports on `basis`.

    `basis` holds one basis vector per row; rows must be pairwise
    orthogonal and nonzero.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    basis = np.asarray(basis, dtype=np.float64)
    gram = basis @ basis.T
    norms = np.diag(gram)
    if np.any(norms <= 0):
        raise ContractError("basis contains a zero vector")
    off = gram - np.diag(norms)
    if np.max(np.abs(off)) > tol * np.max(norms):
        raise ContractError("basis vectors are not pairwise orthogonal")
    a = basis @ u / norms
    b = basis @ v / norms
    scale_a = max(np.max(np.abs(a)), 1.0)
    scale_b = max(np.max(np.abs(b)), 1.0)
    sup_a = np.abs(a) > tol * scale_a
    sup_b = np.abs(b) > tol * scale_b
    return bool(np.any(sup_a & sup_b))
