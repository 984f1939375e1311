"""Clean-label random noise within an l-infinity ball."""

from __future__ import annotations

import numpy as np

from ..data import Dataset
from .budget import DEFAULT_EPSILON, bounded_add, choose_rows, mark


def gaussian_noise(dataset: Dataset, p: float, rng: np.random.Generator, sigma: float = 16.0,
                   epsilon: float = DEFAULT_EPSILON) -> Dataset:
    rows = choose_rows(dataset.n, p, rng)
    x = dataset.features.copy()
    if sigma > 0 and rows.size:
        delta = np.clip(rng.normal(0.0, sigma, size=(rows.size, dataset.d)), -epsilon, epsilon)
        x[rows] = bounded_add(x[rows], delta, epsilon)
    return dataset.with_features(x, mark(dataset, rows))
