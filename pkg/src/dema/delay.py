"""Cross-correlation delay priors between variate pairs.

For each ordered pair (a, b) we search lags t in [-max_lag, max_lag] for
the Pearson-correlation peak between a shifted copy of series a and
series b. Positive t means a's pattern shows up in b t steps later. The
lag is also mapped to the patch-token scale by round-half-away-from-zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ContractError

MIN_OVERLAP = 4  # correlations over fewer points are treated as zero


class LagEstimate(NamedTuple):
    tau: int
    rho: float
    degenerate: bool


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    if x.size < MIN_OVERLAP:
        return 0.0
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0.0:
        return 0.0
    return float(xc @ yc) / denom


def xcorr_delay(a: np.ndarray, b: np.ndarray, max_lag: int) -> LagEstimate:
    """Peak-correlation lag between two equal-length series."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ContractError("xcorr_delay expects two equal-length 1-D series")
    n = a.size
    if n < MIN_OVERLAP:
        raise ContractError(f"series too short (need >= {MIN_OVERLAP} points)")
    if max_lag >= n:
        raise ContractError("max_lag must be smaller than the series length")
    best_tau, best_rho = 0, 0.0
    any_valid = False
    # peak is strongest |correlation|; the signed value is reported.
    # tie-break order: smallest |t| first, negative before positive
    for t in sorted(range(-max_lag, max_lag + 1), key=lambda t: (abs(t), t > 0)):
        if t >= 0:
            xa, xb = a[: n - t], b[t:]
        else:
            xa, xb = a[-t:], b[: n + t]
        if xa.size < MIN_OVERLAP:
            continue
        if xa.std() == 0.0 or xb.std() == 0.0:
            continue
        rho = _pearson(xa, xb)
        if not any_valid or abs(rho) > abs(best_rho):
            best_tau, best_rho = t, rho
        any_valid = True
    if not any_valid:
        return LagEstimate(0, 0.0, True)
    return LagEstimate(best_tau, best_rho, False)


def token_shift(tau: int, P: int) -> int:
    """Map a time-point lag to an integer token shift (half away from zero)."""
    if P < 1:
        raise ContractError("patch length must be >= 1")
    q = tau / P
    return int(math.copysign(math.floor(abs(q) + 0.5), q)) if q != 0 else 0


@dataclass
class DelayPriors:
    tau: np.ndarray        # int [N, N]
    rho: np.ndarray        # float [N, N] in [-1, 1]
    delta_tok: np.ndarray  # int [N, N]
    max_lag: int

    @property
    def n_variates(self) -> int:
        return self.tau.shape[0]

    def rho_weights(self) -> np.ndarray:
        """Attention weights: rho clamped to [0, 1]."""
        return np.clip(self.rho, 0.0, 1.0)

    @staticmethod
    def identity(n: int, max_lag: int = 0) -> "DelayPriors":
        """No cross-variate coupling: rho is the identity, all lags zero."""
        return DelayPriors(
            tau=np.zeros((n, n), dtype=np.int64),
            rho=np.eye(n),
            delta_tok=np.zeros((n, n), dtype=np.int64),
            max_lag=max_lag,
        )


def delay_matrix(window: np.ndarray, max_lag: int, patch_len: int) -> DelayPriors:
    """Pairwise delay priors over all ordered variate pairs of a window."""
    window = np.atleast_2d(np.asarray(window, dtype=np.float64))
    n = window.shape[0]
    tau = np.zeros((n, n), dtype=np.int64)
    rho = np.eye(n)
    delta = np.zeros((n, n), dtype=np.int64)
    for a in range(n):
        for b in range(n):
            if a == b:
                continue
            est = xcorr_delay(window[a], window[b], max_lag)
            tau[a, b] = est.tau
            rho[a, b] = est.rho
            delta[a, b] = token_shift(est.tau, patch_len)
    return DelayPriors(tau=tau, rho=rho, delta_tok=delta, max_lag=max_lag)


def default_max_lag(T_len: int) -> int:
    """Default lag search bound: a quarter of the window."""
    return max(1, min(T_len // 4, T_len - MIN_OVERLAP))
