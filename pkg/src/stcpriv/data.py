"""Synthetic feature databases."""
from __future__ import annotations

import numpy as np

__all__ = ["gen_clustered", "gen_iid"]


def gen_clustered(k: int = 4, per_cluster: int = 250, N: int = 512, center_var: float = 1.0,
                  within_var: float = 0.1, seed: int | None = 0) -> tuple[np.ndarray, np.ndarray]:
    """``k`` Gaussian centers, each perturbed ``per_cluster`` times.

    Returns ``(X, labels)`` with ``X`` of shape ``N x (k * per_cluster)``;
    column ``m`` is ``center[labels[m]] + w`` with ``w ~ N(0, within_var I)``.
    """
    rng = np.random.default_rng(seed)
    centers = np.sqrt(center_var) * rng.standard_normal((k, N))
    w = np.sqrt(within_var) * rng.standard_normal((k * per_cluster, N))
    labels = np.repeat(np.arange(k), per_cluster)
    return np.ascontiguousarray((centers[labels] + w).T), labels


def gen_iid(M: int, N: int, var: float = 1.0, seed: int | None = 0) -> np.ndarray:
    """``N x M`` matrix of i.i.d. ``N(0, var)`` entries."""
    return np.sqrt(var) * np.random.default_rng(seed).standard_normal((N, M))
