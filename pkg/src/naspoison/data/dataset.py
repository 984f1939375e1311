"""Datasets in pixel units, synthetic generators, stratified splits and normalization."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ConfigurationError

PIXEL_MAX = 255.0


def poison_count(n: int, p: float) -> int:
    """``floor(n * p)`` robust to binary round-off (``0.29 * 100`` is 28.999...)."""
    if not 0.0 <= p <= 1.0:
        raise ConfigurationError(f"budget p must lie in [0, 1], got {p}")
    return int(math.floor(n * p + 1e-9))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    poison_mask: np.ndarray | None = None
    name: str = "dataset"
    grid_shape: tuple | None = None
    normalized: bool = False

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise ConfigurationError(f"features {x.shape} and labels {y.shape} disagree")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ConfigurationError("labels outside [0, num_classes)")
        if not self.normalized and x.size and (x.min() < 0.0 or x.max() > PIXEL_MAX):
            raise ConfigurationError("pixel features must lie in [0, 255]")
        mask = np.zeros(len(y), dtype=bool) if self.poison_mask is None else np.asarray(self.poison_mask, bool)
        if mask.shape != y.shape:
            raise ConfigurationError("poison_mask length differs from n")
        if self.grid_shape is not None and int(np.prod(self.grid_shape)) != x.shape[1]:
            raise ConfigurationError(f"grid {self.grid_shape} does not match d={x.shape[1]}")
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "labels", _frozen(y))
        object.__setattr__(self, "poison_mask", _frozen(mask))

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def is_clean(self) -> bool:
        return not bool(self.poison_mask.any())

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(self, features=self.features[idx], labels=self.labels[idx],
                       poison_mask=self.poison_mask[idx])

    def with_labels(self, labels, mask=None) -> "Dataset":
        return replace(self, labels=labels, poison_mask=self.poison_mask if mask is None else mask)

    def with_features(self, features, mask=None) -> "Dataset":
        return replace(self, features=features, poison_mask=self.poison_mask if mask is None else mask)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


def concat_datasets(parts: list) -> tuple:
    """Stack datasets row-wise; returns the union and the row ranges of each part."""
    first = parts[0]
    bounds = np.cumsum([0] + [p.n for p in parts])
    ds = replace(first,
                 features=np.concatenate([p.features for p in parts]),
                 labels=np.concatenate([p.labels for p in parts]),
                 poison_mask=np.concatenate([p.poison_mask for p in parts]))
    return ds, [np.arange(bounds[i], bounds[i + 1]) for i in range(len(parts))]


# ---------------------------------------------------------------- generators


def _class_sizes(n: int, c: int) -> list:
    return [n // c + (1 if k < n % c else 0) for k in range(c)]


def _embed(base: np.ndarray, d: int, rng: np.random.Generator, noise: float) -> np.ndarray:
    """Lift 2-D structure into d dims with extra noise coordinates and a random rotation."""
    n = base.shape[0]
    if d == 2:
        return base
    extra = rng.normal(0.0, noise, size=(n, d - 2))
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    return np.concatenate([base, extra], axis=1) @ q


def _to_pixels(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    return (x - lo) / span * PIXEL_MAX


def generate_synthetic(kind: str, n: int, d: int, num_classes: int, seed: int,
                       clusters_per_class: int = 1, spread: float = 1.0, separation: float = 4.0,
                       noise: float = 0.1) -> Dataset:
    """Class-balanced synthetic task rescaled per feature into [0, 255].

    ``blobs`` draws ``clusters_per_class`` Gaussian clusters for every class in
    d dims; ``moons`` and ``rings`` build interleaved arcs / concentric rings in
    2-D and lift them into d dims.
    """
    if n < num_classes:
        raise ConfigurationError(f"n={n} smaller than class count {num_classes}")
    if d < 2:
        raise ConfigurationError("need d >= 2")
    if num_classes < 2:
        raise ConfigurationError("need at least 2 classes")
    rng = np.random.default_rng(seed)
    sizes = _class_sizes(n, num_classes)
    labels = np.concatenate([np.full(s, k) for k, s in enumerate(sizes)])
    if kind == "blobs":
        centers = rng.normal(0.0, separation, size=(num_classes, clusters_per_class, d))
        which = np.concatenate([np.arange(s) % clusters_per_class for s in sizes])
        x = centers[labels, which] + rng.normal(0.0, spread, size=(n, d))
    elif kind == "moons":
        parts = []
        for k, s in enumerate(sizes):
            t = rng.uniform(0.0, math.pi, size=s)
            sign = 1.0 if k % 2 == 0 else -1.0
            arc = np.stack([np.cos(t) + 1.0 * k, sign * np.sin(t) + 0.5 * (k % 2)], axis=1)
            parts.append(arc)
        x = _embed(np.concatenate(parts) + rng.normal(0.0, noise, size=(n, 2)), d, rng, noise)
    elif kind == "rings":
        parts = []
        for k, s in enumerate(sizes):
            t = rng.uniform(0.0, 2.0 * math.pi, size=s)
            r = 1.0 + k
            parts.append(np.stack([r * np.cos(t), r * np.sin(t)], axis=1))
        x = _embed(np.concatenate(parts) + rng.normal(0.0, noise, size=(n, 2)), d, rng, noise)
    else:
        raise ConfigurationError(f"unknown synthetic kind {kind!r}")
    order = rng.permutation(n)
    return Dataset(_to_pixels(x)[order], labels[order], num_classes, name=f"{kind}-s{seed}")


# -------------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitSpec:
    """Fractions for (search-train, search-val, final-train, test)."""

    fractions: tuple = (0.4, 0.1, 0.4, 0.1)
    seed: int = 0

    def __post_init__(self):
        f = tuple(float(v) for v in self.fractions)
        if len(f) != 4 or min(f) < 0 or abs(sum(f) - 1.0) > 1e-9:
            raise ConfigurationError(f"split fractions must be 4 non-negative values summing to 1, got {f}")
        object.__setattr__(self, "fractions", f)


def _largest_remainder(total: int, fractions) -> np.ndarray:
    ideal = np.asarray(fractions) * total
    base = np.floor(ideal + 1e-9).astype(int)
    order = np.argsort(-(ideal - base), kind="stable")
    base[order[: total - base.sum()]] += 1
    return base


def _stratified_allocation(class_counts: np.ndarray, fractions) -> np.ndarray:
    """Integer table (classes x splits): rows sum to class counts, each cell within 1 of
    proportional, and column sums equal the largest-remainder split sizes."""
    f = np.asarray(fractions)
    targets = _largest_remainder(int(class_counts.sum()), f)
    ideal = class_counts[:, None] * f[None, :]
    table = np.floor(ideal + 1e-9).astype(int)
    extra_rows = class_counts - table.sum(axis=1)
    need = targets - table.sum(axis=0)
    frac = ideal - table
    for c in np.argsort(-extra_rows, kind="stable"):
        for _ in range(int(extra_rows[c])):
            candidates = [s for s in range(len(f)) if frac[c, s] > 1e-12]
            if not candidates:
                candidates = list(range(len(f)))
            s = max(candidates, key=lambda s: (need[s], frac[c, s], -s))
            table[c, s] += 1
            frac[c, s] = 0.0
            need[s] -= 1
    return table


def split_indices(dataset: Dataset, spec: SplitSpec) -> tuple:
    """Stratified, seeded four-way partition of ``range(n)`` as sorted index arrays."""
    rng = np.random.default_rng(spec.seed)
    table = _stratified_allocation(dataset.class_counts(), spec.fractions)
    buckets = [[] for _ in range(4)]
    for c in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == c)
        idx = idx[rng.permutation(idx.size)]
        start = 0
        for s in range(4):
            buckets[s].append(idx[start : start + table[c, s]])
            start += table[c, s]
    out = tuple(np.sort(np.concatenate(parts)).astype(np.int64) for parts in buckets)
    for s, idx in enumerate(out):
        if idx.size == 0:
            raise ConfigurationError(f"split {s} is empty")
    return out


def split(dataset: Dataset, spec: SplitSpec) -> tuple:
    """(search_train, search_val, final_train, test); disjoint and exhaustive."""
    return tuple(dataset.subset(idx) for idx in split_indices(dataset, spec))


# ------------------------------------------------------------- normalization


@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray
    clamped: tuple = field(default=())

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


def fit_normalizer(data) -> Normalizer:
    """Per-feature statistics of a Dataset or a raw feature matrix."""
    x = data.features if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    zero = np.flatnonzero(std <= 1e-12)
    if zero.size:
        warnings.warn(f"zero-variance features {zero.tolist()} clamped to std 1", RuntimeWarning,
                      stacklevel=2)
        std = std.copy()
        std[zero] = 1.0
    return Normalizer(mean, std, tuple(zero.tolist()))


def normalize(dataset: Dataset, stats_from: Dataset | Normalizer | None = None) -> tuple:
    """Standardize ``dataset`` with statistics from ``stats_from`` (the training split)."""
    if isinstance(stats_from, Normalizer):
        norm = stats_from
    else:
        norm = fit_normalizer(dataset if stats_from is None else stats_from)
    out = replace(dataset, features=norm.transform(dataset.features), normalized=True)
    return out, norm


def denormalize(dataset: Dataset, norm: Normalizer) -> Dataset:
    x = np.clip(norm.inverse(dataset.features), 0.0, PIXEL_MAX)
    return replace(dataset, features=x, normalized=False)
