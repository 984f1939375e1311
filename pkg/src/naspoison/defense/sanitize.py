"""Loss-based sanitization and cluster-based relabeling."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..autodiff import Tensor
from ..data import Dataset, fit_normalizer
from ..errors import ConfigurationError
from ..nn import MLP, per_sample_loss, train_model
from .kmeans import kmeans


@dataclass(frozen=True)
class SanitizationConfig:
    fraction: float = 0.5
    epochs: int = 30
    hidden: int = 32
    lr: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.fraction < 1.0:
            raise ConfigurationError("discard fraction must lie in [0, 1)")

    @classmethod
    def from_dict(cls, d: dict | None) -> "SanitizationConfig":
        return cls(**dict(d or {}))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RelabelConfig:
    k: int | None = None  # defaults to the class count
    max_iter: int = 100
    restarts: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.k is not None and self.k < 2:
            raise ConfigurationError("need at least 2 clusters")

    @classmethod
    def from_dict(cls, d: dict | None) -> "RelabelConfig":
        return cls(**dict(d or {}))

    def to_dict(self) -> dict:
        return asdict(self)


def retained_per_class(count: int, fraction: float) -> int:
    return int(np.ceil(count * (1.0 - fraction) - 1e-9))


def sanitization_keep(labels: np.ndarray, losses: np.ndarray, fraction: float, num_classes: int) -> np.ndarray:
    """Sorted indices kept after dropping the highest-loss fraction of every class
    (equal losses drop the later row first)."""
    keep = []
    for c in range(num_classes):
        rows = np.flatnonzero(labels == c)
        if rows.size == 0:
            continue
        n_keep = retained_per_class(rows.size, fraction)
        if n_keep == 0:
            raise ConfigurationError(f"sanitization would empty class {c}")
        order = np.lexsort((rows, losses[rows]))
        keep.append(rows[order[:n_keep]])
    return np.sort(np.concatenate(keep)) if keep else np.zeros(0, dtype=np.int64)


def loss_sanitize(dataset: Dataset, config: SanitizationConfig | None = None) -> tuple:
    """Train a defender on the whole (possibly poisoned) set and drop poorly fit rows.

    Returns (filtered dataset, kept indices); surviving rows keep their original order.
    """
    config = config or SanitizationConfig()
    if config.fraction == 0.0:
        return dataset, np.arange(dataset.n)
    net = MLP([dataset.d, config.hidden, config.hidden, dataset.num_classes], seed=config.seed)
    norm = fit_normalizer(dataset.features)
    train_model(net, dataset, norm, config.epochs, lr=config.lr, seed=config.seed)
    losses = per_sample_loss(net, dataset, norm)
    keep = sanitization_keep(dataset.labels, losses, config.fraction, dataset.num_classes)
    return dataset.subset(keep), keep


class PenultimateExtractor:
    """Penultimate-layer features of a small net trained on a clean auxiliary split."""

    def __init__(self, aux: Dataset, hidden: int = 32, epochs: int = 30, seed: int = 0):
        if not aux.is_clean:
            raise ConfigurationError("feature extractor must be trained on clean data")
        self.net = MLP([aux.d, hidden, hidden, aux.num_classes], seed=seed)
        self.norm = fit_normalizer(aux.features)
        train_model(self.net, aux, self.norm, epochs, seed=seed)

    def __call__(self, features: np.ndarray) -> np.ndarray:
        return self.net.features(Tensor(self.norm.transform(features))).data


def majority_labels(assign: np.ndarray, labels: np.ndarray, k: int, num_classes: int) -> np.ndarray:
    """Per cluster, the most common current label (smallest label wins ties)."""
    out = np.empty(k, dtype=np.int64)
    for j in range(k):
        members = labels[assign == j]
        counts = np.bincount(members, minlength=num_classes)
        out[j] = int(counts.argmax())
    return out


def cluster_relabel(dataset: Dataset, feature_extractor=None, config: RelabelConfig | None = None) -> tuple:
    """k-means on extracted features; each row takes its cluster's majority label.

    ``feature_extractor`` maps pixel features to embeddings (identity if None).
    Returns (relabeled dataset, assignments).
    """
    config = config or RelabelConfig()
    k = config.k or dataset.num_classes
    emb = dataset.features if feature_extractor is None else feature_extractor(dataset.features)
    res = kmeans(emb, k, seed=config.seed, max_iter=config.max_iter, restarts=config.restarts)
    new = majority_labels(res.assignments, dataset.labels, k, dataset.num_classes)[res.assignments]
    return dataset.with_labels(new), res.assignments


def cluster_purity(assign: np.ndarray, truth: np.ndarray) -> float:
    total = 0
    for j in np.unique(assign):
        total += np.bincount(truth[assign == j]).max()
    return total / len(truth)
