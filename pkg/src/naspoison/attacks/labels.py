"""Dirty-label attacks: labels change, features stay byte-identical."""

from __future__ import annotations

import numpy as np

from ..data import Dataset, fit_normalizer
from ..errors import ConfigurationError
from ..nn import MLP, predict_logits, train_model
from .budget import PoisonBudget, choose_rows, mark


def rlf(dataset: Dataset, p: float, rng: np.random.Generator) -> Dataset:
    """Random label flipping to a uniform choice among the other C-1 classes."""
    c = dataset.num_classes
    if c < 2:
        raise ConfigurationError("label flipping needs at least 2 classes")
    rows = choose_rows(dataset.n, p, rng)
    y = dataset.labels.copy()
    y[rows] = (y[rows] + rng.integers(1, c, size=rows.size)) % c
    return dataset.with_labels(y, mark(dataset, rows))


def clf_from_logits(labels: np.ndarray, logits: np.ndarray, p: float) -> tuple:
    """Rows with the largest max-logit flip to their least-confident class.

    Returns (new labels, flipped row indices). Equal max-logits keep row order.
    When the least-confident class is the current label the second-least is used.
    """
    labels = np.asarray(labels)
    k = PoisonBudget(p).count(len(labels))
    order = np.argsort(-logits.max(axis=1), kind="stable")
    rows = np.sort(order[:k])
    y = labels.copy()
    for i in rows:
        ranked = np.argsort(logits[i], kind="stable")
        y[i] = ranked[0] if ranked[0] != labels[i] else ranked[1]
    return y, rows


def train_surrogate(dataset: Dataset, seed: int = 0, hidden: int = 32, epochs: int = 30, lr: float = 0.05):
    """The 2-hidden-layer surrogate classifier; returns (model, normalizer)."""
    net = MLP([dataset.d, hidden, hidden, dataset.num_classes], seed=seed)
    norm = fit_normalizer(dataset.features)
    train_model(net, dataset, norm, epochs, lr=lr, seed=seed)
    return net, norm


def clf(dataset: Dataset, p: float, surrogate=None, normalizer=None, seed: int = 0) -> Dataset:
    """Confidence-ranked label flipping. Trains a surrogate on ``dataset`` when none is given."""
    if dataset.num_classes < 2:
        raise ConfigurationError("label flipping needs at least 2 classes")
    if surrogate is None:
        surrogate, normalizer = train_surrogate(dataset, seed)
    logits = predict_logits(surrogate, dataset.features, normalizer)
    y, rows = clf_from_logits(dataset.labels, logits, p)
    return dataset.with_labels(y, mark(dataset, rows))
