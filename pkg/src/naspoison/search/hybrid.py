"""Hybrid search: zero-cost metric ensembles weighted by short-training feedback."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from ..data import Dataset, fit_normalizer
from ..errors import ConfigurationError, TrialFailure
from ..metrics import LOSS_METRICS, loss_based_scores
from ..nn import accuracy, train_model
from ..space import NetworkInstance, random_genotype
from .result import SearchResult


@dataclass(frozen=True)
class HybridSearchConfig:
    pool_size: int = 20
    metrics: tuple = LOSS_METRICS
    rounds: int = 8
    short_epochs: int = 5
    metric_batch: int = 64
    cells: int = 3
    width: int = 16
    lr: float = 0.05
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.pool_size < 1 or self.rounds < 1:
            raise ConfigurationError("pool size and rounds must be positive")
        if not self.metrics:
            raise ConfigurationError("metric set must be nonempty")
        unknown = set(self.metrics) - set(LOSS_METRICS)
        if unknown:
            raise ConfigurationError(f"unknown metrics {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d: dict | None) -> "HybridSearchConfig":
        d = dict(d or {})
        if "metrics" in d:
            d["metrics"] = tuple(d["metrics"])
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def rank_normalize(values: np.ndarray) -> np.ndarray:
    """Map each column to [0, 1] by rank (higher value -> higher score; ties share the lower rank)."""
    values = np.asarray(values, dtype=float)
    k = values.shape[0]
    out = np.zeros_like(values)
    if k == 1:
        return out
    for j in range(values.shape[1]):
        col = np.where(np.isfinite(values[:, j]), values[:, j], -np.inf)
        out[:, j] = [np.sum(col < v) / (k - 1) for v in col]
    return out


def select_candidate(ranks: np.ndarray, weights: np.ndarray) -> int:
    """Index maximizing the weighted rank score; the first maximizer wins ties."""
    return int(np.argmax(ranks @ np.asarray(weights, dtype=float)))


def hybrid_search(search_data: Dataset, val: Dataset, config: HybridSearchConfig | None = None) -> SearchResult:
    config = config or HybridSearchConfig()
    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    norm = fit_normalizer(search_data.features)
    pool = [random_genotype(rng) for _ in range(config.pool_size)]
    idx = rng.choice(search_data.n, size=min(config.metric_batch, search_data.n), replace=False)
    xb, yb = norm.transform(search_data.features[idx]), search_data.labels[idx]
    raw = np.zeros((len(pool), len(config.metrics)))
    for i, g in enumerate(pool):
        net = NetworkInstance(g, config.cells, config.width, search_data.d, search_data.num_classes,
                              seed=config.seed * 7907 + i)
        scores = loss_based_scores(net, xb, yb)
        raw[i] = [scores[m] for m in config.metrics]
    ranks = rank_normalize(raw)

    cache: dict = {}
    history = []
    best = None
    for t in range(config.rounds):
        w = rng.dirichlet(np.ones(len(config.metrics)))
        pick = select_candidate(ranks, w)
        if pick not in cache:
            net = NetworkInstance(pool[pick], config.cells, config.width, search_data.d,
                                  search_data.num_classes, seed=config.seed * 7907 + pick)
            try:
                train_model(net, search_data, norm, config.short_epochs, lr=config.lr,
                            batch_size=config.batch_size, seed=config.seed + pick)
                cache[pick] = accuracy(net, val, norm)
            except TrialFailure:
                cache[pick] = None
        acc = cache[pick]
        history.append({"round": t, "weights": [float(v) for v in w], "candidate": pick, "val_acc": acc})
        if acc is not None and (best is None or acc > best[0]):
            best = (acc, pick)
    if best is None:
        raise TrialFailure("every short training diverged")
    diag = {"metrics": list(config.metrics), "raw_scores": raw.tolist(), "history": history,
            "selected": best[1], "val_acc": best[0]}
    return SearchResult(pool[best[1]], "hybrid", time.perf_counter() - t0, diag)
