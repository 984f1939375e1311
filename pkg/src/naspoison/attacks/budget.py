from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import PIXEL_MAX, Dataset, poison_count
from ..errors import ConfigurationError

DEFAULT_EPSILON = 16.0


@dataclass(frozen=True)
class PoisonBudget:
    p: float

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ConfigurationError(f"poison budget must lie in (0, 1], got {self.p}")

    def count(self, n: int) -> int:
        return poison_count(n, self.p)


@dataclass(frozen=True)
class PerturbationBound:
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigurationError("perturbation bound must be non-negative")


def choose_rows(n: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Sorted uniform subset of size floor(n p)."""
    k = PoisonBudget(p).count(n)
    return np.sort(rng.choice(n, size=k, replace=False)) if k else np.zeros(0, dtype=np.int64)


def mark(dataset: Dataset, rows: np.ndarray) -> np.ndarray:
    mask = dataset.poison_mask.copy()
    mask[rows] = True
    return mask


def bounded_add(x0: np.ndarray, delta: np.ndarray, eps: float) -> np.ndarray:
    """``clip(x0 + delta)`` with ``|x - x0| <= eps`` holding exactly in floating point."""
    x = np.clip(x0 + delta, 0.0, PIXEL_MAX)
    for _ in range(4):
        over = np.abs(x - x0) > eps
        if not over.any():
            break
        x[over] = np.nextafter(x[over], x0[over])
    return x
