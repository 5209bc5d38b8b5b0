"""Label corruption: uniform flips for class labels, outlier replacement for continuous labels."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels


@dataclass
class TransitionMatrix:
    """``t[j, i]`` = probability of recording class ``j`` when the true class is ``i``."""

    t: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        if self.t.ndim != 2 or self.t.shape[0] != self.t.shape[1]:
            raise ValueError(f"transition matrix must be square, got {self.t.shape}")
        if np.any(self.t < 0):
            raise ValueError("transition matrix has negative entries")
        cols = self.t.sum(axis=0)
        if np.any(np.abs(cols - 1.0) > 1e-9):
            raise ValueError(f"transition matrix columns must sum to 1, got {cols}")

    @property
    def K(self) -> int:
        return self.t.shape[0]


def uniform_flip_matrix(K: int, rho: float) -> TransitionMatrix:
    """Keep the label with probability ``1 - rho``, else move it uniformly to another class."""
    if K < 2:
        raise ValueError(f"K must be >= 2, got {K}")
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"flip rate must lie in [0, 1), got {rho}")
    t = np.full((K, K), rho / (K - 1))
    np.fill_diagonal(t, 1.0 - rho)
    return TransitionMatrix(t)


def corrupt_discrete(clean: np.ndarray, T: TransitionMatrix, rng: np.random.Generator):
    """Resample every label from column ``T.t[:, clean]``.

    Returns ``(noisy, flip_mask)``.
    """
    clean = np.ascontiguousarray(clean, dtype=np.int64)
    if clean.size and (clean.min() < 0 or clean.max() >= T.K):
        raise ValueError("clean labels out of range")
    cdf = np.ascontiguousarray(np.cumsum(T.t, axis=0).T)  # row i = CDF of column i
    u = rng.random(clean.shape[0])
    noisy = kernels.sample_from_cdf(u, cdf, clean)
    return noisy, noisy != clean


def corrupt_continuous(clean: np.ndarray, rho: float, rng: np.random.Generator):
    """With probability ``rho`` per sample, replace the whole vector by a uniform draw from [-1, 1]^d.

    Returns ``(noisy, replaced_mask)``.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"outlier rate must lie in [0, 1], got {rho}")
    clean = np.asarray(clean, dtype=np.float64)
    n = clean.shape[0]
    mask = rng.random(n) < rho
    draws = rng.uniform(-1.0, 1.0, size=clean.shape)
    noisy = np.where(mask.reshape((n,) + (1,) * (clean.ndim - 1)), draws, clean)
    return noisy, mask


def majority_vote(label_sets, rng: np.random.Generator, n_classes: int | None = None) -> np.ndarray:
    """Per-sample most frequent label across sets; ties broken uniformly at random."""
    label_sets = [np.asarray(s, dtype=np.int64) for s in label_sets]
    if not label_sets:
        raise ValueError("majority_vote needs at least one label set")
    n = label_sets[0].shape[0]
    if any(s.shape != (n,) for s in label_sets):
        raise ValueError("label sets must be 1-D and of equal length")
    if n_classes is None:
        n_classes = int(max(s.max(initial=0) for s in label_sets)) + 1
    stacked = np.ascontiguousarray(np.stack(label_sets, axis=1))
    winners, _ = kernels.vote(stacked, n_classes, rng.random(n))
    return winners


@dataclass
class NoiseConfig:
    """One entry per independent noisy label set."""

    discrete_rates: list[float] = field(default_factory=lambda: [0.4, 0.4, 0.4])
    continuous_rates: list[float] = field(default_factory=list)

    def validate(self) -> None:
        for r in self.discrete_rates:
            if not 0.0 <= r < 1.0:
                raise ValueError(f"flip rate must lie in [0, 1), got {r}")
        for r in self.continuous_rates:
            if not 0.0 <= r < 1.0:
                raise ValueError(f"outlier rate must lie in [0, 1), got {r}")
