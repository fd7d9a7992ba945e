"""Synthetic data with immutable informative features and mutable noisy ones."""
from __future__ import annotations

import numpy as np

from .data import Dataset, FeatureMeta


def make_synthetic(n: int = 2000, seed: int = 0, n_immutable: int = 2, n_mutable: int = 3,
                   noise: float = 0.1, mutable_signal: float = 0.25) -> Dataset:
    """Labels follow the immutable features plus a weak contribution of the mutable ones.

    A vanilla learner splits almost only on the immutable features, which
    leaves most negatives without any action that flips their prediction.
    """
    rng = np.random.default_rng(seed)
    Xi = rng.random((n, n_immutable))
    Xm = rng.random((n, n_mutable))
    score = Xi.mean(axis=1) + mutable_signal * (Xm.mean(axis=1) - 0.5) + noise * rng.standard_normal(n)
    y = np.where(score > 0.5, 1, -1)
    X = np.round(np.hstack([Xi, Xm]), 3)
    feats = [FeatureMeta(f"fixed{d}", "continuous", 0.0, 1.0, True, "fixed") for d in range(n_immutable)]
    feats += [FeatureMeta(f"free{d}", "continuous", 0.0, 1.0, False, "free") for d in range(n_mutable)]
    return Dataset(X, y, feats)
