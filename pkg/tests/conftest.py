"""Shared fixtures: synthetic coupled-variate datasets and tiny configs."""

import numpy as np
import pytest

from dema.pipeline import DatasetSplits


def coupled_series(n_steps=1000, seed=0, delay=4, noise=0.05):
    """Two variates where variate 2 is variate 1 delayed by `delay` steps.

    The base signal mixes two sinusoids with a smoothed random drift so it
    is neither pure noise nor fully periodic.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n_steps + delay, dtype=np.float64)
    det = np.sin(2 * np.pi * t / 24) + 0.5 * np.sin(2 * np.pi * t / 60)
    drift = np.convolve(rng.standard_normal(n_steps + delay + 24),
                        np.ones(24) / 24, mode="same")[: n_steps + delay]
    base = det + 1.5 * drift
    v1 = base[delay:] + noise * rng.standard_normal(n_steps)
    v2 = base[:-delay] if delay else base
    v2 = v2 + noise * rng.standard_normal(n_steps)
    return np.stack([v1, v2])


def coupled_splits(n_steps=1000, seed=0, delay=4, noise=0.05,
                   n_train=600, n_val=200):
    data = coupled_series(n_steps, seed, delay, noise)
    mean = data[:, :n_train].mean(axis=1, keepdims=True)
    std = np.maximum(data[:, :n_train].std(axis=1, keepdims=True), 1e-8)
    z = (data - mean) / std
    return DatasetSplits(
        train=z[:, :n_train],
        val=z[:, n_train:n_train + n_val],
        test=z[:, n_train + n_val:],
        scaler_mean=mean[:, 0],
        scaler_std=std[:, 0],
        columns=["v1", "v2"],
    )


def chirp(n, rate=0.5, f0=0.002):
    """Linear chirp: instantaneous frequency grows with time."""
    t = np.arange(n, dtype=np.float64)
    return np.sin(2 * np.pi * (f0 * t + rate * t * t / (2 * n)))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
