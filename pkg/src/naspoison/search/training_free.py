"""Training-free pruning search driven by NTK conditioning and linear-region counts."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import WEIGHTS, ActivationRecorder, Tape, Tensor
from ..data import Dataset, fit_normalizer
from ..errors import ConfigurationError, TrialFailure
from ..metrics import condition_number_from_gram, count_patterns, gram_from_gradients
from ..space import CELL_KINDS, EDGES, NODES, NUM_OPS, Genotype, OpKind, Supernet, edge_index, full_masks
from .result import SearchResult


@dataclass(frozen=True)
class TfSearchConfig:
    ntk_batch: int = 8
    region_probes: int = 32
    rounds: int | None = None  # op-pruning rounds; None prunes one op per edge per round
    init_draws: int = 3
    cells: int = 3
    width: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.ntk_batch < 2 or self.region_probes < 2:
            raise ConfigurationError("probe sizes must be at least 2")
        if self.rounds is not None and self.rounds < 1:
            raise ConfigurationError("rounds must be positive")
        if self.init_draws < 1:
            raise ConfigurationError("need at least one initialization draw")

    @classmethod
    def from_dict(cls, d: dict | None) -> "TfSearchConfig":
        return cls(**dict(d or {}))

    def to_dict(self) -> dict:
        return asdict(self)


def _probe_metrics(net: Supernet, x: np.ndarray, ntk_batch: int) -> tuple:
    """(kappa, regions) from one forward and one per-sample backward over the probe rows."""
    leaves = net.params.tensors(WEIGHTS)
    with ActivationRecorder() as rec, Tape() as tape:
        out = ad.tsum(net.forward(Tensor(x)), axis=1)
    regions = count_patterns(rec.sign_patterns())
    grads = ad.per_sample_backward(tape, out, leaves)
    g = np.concatenate([gi[:ntk_batch].reshape(ntk_batch, -1) for gi in grads], axis=1)
    r = condition_number_from_gram(gram_from_gradients(g))
    return (r.kappa if r.stable else float("inf")), regions


class _Evaluator:
    def __init__(self, d: int, num_classes: int, x: np.ndarray, config: TfSearchConfig):
        self.d, self.c, self.x, self.config = d, num_classes, x, config
        self.calls = 0

    def __call__(self, masks: dict, round_seed: int) -> tuple:
        cfg = self.config
        kappas, regions = [], []
        for draw in range(cfg.init_draws):
            net = Supernet(cfg.cells, cfg.width, self.d, self.c, seed=round_seed * 1009 + draw, masks=masks)
            k, r = _probe_metrics(net, self.x, cfg.ntk_batch)
            kappas.append(k)
            regions.append(r)
        self.calls += 1
        return float(np.mean(kappas)), float(np.mean(regions))


def _ranks(values, higher_better: bool) -> np.ndarray:
    """1-based competition ranks; equal values share the best rank."""
    v = -np.asarray(values, dtype=float) if higher_better else np.asarray(values, dtype=float)
    v = np.where(np.isnan(v), np.inf, v)
    return np.array([1 + int(np.sum(v < x)) for x in v])


def _rank_sum(scores: list) -> np.ndarray:
    kappa = [s[0] for s in scores]
    regions = [s[1] for s in scores]
    return _ranks(kappa, higher_better=False) + _ranks(regions, higher_better=True)


def _removable(mask: np.ndarray, e: int, o: int) -> bool:
    if not mask[e, o] or mask[e].sum() <= 1:
        return False
    non_none = [p for p in range(1, NUM_OPS) if mask[e, p]]
    # none must never be the last survivor
    return not (o != OpKind.NONE and non_none == [o])


def _prune_ops(masks: dict, evaluate: _Evaluator, rounds: int | None, seed: int, log: list) -> dict:
    masks = {k: m.copy() for k, m in masks.items()}
    round_idx = 0
    while any(m.sum(axis=1).max() > 1 for m in masks.values()):
        remaining = max(int(m.sum(axis=1).max()) for m in masks.values()) - 1
        if rounds is None:
            per_edge = 1
        else:
            per_edge = int(np.ceil(remaining / max(1, rounds - round_idx)))
        cands = [(kind, e, o) for kind in CELL_KINDS for e in range(len(EDGES)) for o in range(NUM_OPS)
                 if _removable(masks[kind], e, o)]
        scores = []
        for kind, e, o in cands:
            trial = {k: m.copy() for k, m in masks.items()}
            trial[kind][e, o] = False
            scores.append(evaluate(trial, seed + round_idx))
        combined = _rank_sum(scores)
        by_edge: dict = {}
        for (kind, e, o), sc in zip(cands, combined):
            by_edge.setdefault((kind, e), []).append((int(sc), o))
        pruned = []
        for (kind, e), items in sorted(by_edge.items()):
            for sc, o in sorted(items)[:per_edge]:
                if _removable(masks[kind], e, o):
                    masks[kind][e, o] = False
                    pruned.append(f"{kind}:{e}:{OpKind(o).label}")
        if not pruned:
            raise TrialFailure("training-free pruning stalled")
        log.append({"round": round_idx, "candidates": len(cands), "pruned": pruned})
        round_idx += 1
    return masks


def _edge_alive(mask: np.ndarray, e: int) -> bool:
    return bool(mask[e, 1:].any())


def _prune_edges(masks: dict, evaluate: _Evaluator, seed: int, log: list) -> dict:
    """Remove one incoming edge per over-full node per round until every node keeps two."""
    masks = {k: m.copy() for k, m in masks.items()}
    round_idx = 0
    while True:
        cands = []
        for kind in CELL_KINDS:
            for i in range(NODES):
                alive = [edge_index(i, s) for s in range(i + 2) if _edge_alive(masks[kind], edge_index(i, s))]
                if len(alive) > 2:
                    cands += [(kind, i, e) for e in alive]
        if not cands:
            return masks
        scores = []
        for kind, i, e in cands:
            trial = {k: m.copy() for k, m in masks.items()}
            trial[kind][e, :] = False
            trial[kind][e, OpKind.NONE] = True
            scores.append(evaluate(trial, seed + 100 + round_idx))
        combined = _rank_sum(scores)
        best: dict = {}
        for (kind, i, e), sc in zip(cands, combined):
            key = (kind, i)
            if key not in best or (int(sc), e) < best[key]:
                best[key] = (int(sc), e)
        for (kind, i), (_, e) in sorted(best.items()):
            masks[kind][e, :] = False
            masks[kind][e, OpKind.NONE] = True
        log.append({"edge_round": round_idx, "removed": [f"{k}:{e}" for (k, _), (_, e) in sorted(best.items())]})
        round_idx += 1


def _genotype_from_masks(masks: dict) -> Genotype:
    cells = []
    for kind in CELL_KINDS:
        nodes = []
        for i in range(NODES):
            pairs = []
            for s in range(i + 2):
                e = edge_index(i, s)
                ops = [o for o in range(1, NUM_OPS) if masks[kind][e, o]]
                if ops:
                    pairs.append((s, OpKind(ops[0])))
            nodes.append(tuple(pairs))
        cells.append(tuple(nodes))
    return Genotype(*cells)


def tf_search(search_data: Dataset, config: TfSearchConfig | None = None) -> SearchResult:
    """Prune a fresh supernet by NTK/region rank-sums; labels are never read."""
    config = config or TfSearchConfig()
    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    n_probe = max(config.region_probes, config.ntk_batch)
    if search_data.n < n_probe:
        raise ConfigurationError(f"search data has {search_data.n} rows, probes need {n_probe}")
    norm = fit_normalizer(search_data.features)
    idx = rng.choice(search_data.n, size=n_probe, replace=False)
    x = norm.transform(search_data.features[idx])
    evaluate = _Evaluator(search_data.d, search_data.num_classes, x, config)
    log: list = []
    masks = _prune_ops(full_masks(), evaluate, config.rounds, config.seed * 131, log)
    masks = _prune_edges(masks, evaluate, config.seed * 131, log)
    genotype = _genotype_from_masks(masks)
    diag = {"rounds": log, "evaluations": evaluate.calls}
    return SearchResult(genotype, "training_free", time.perf_counter() - t0, diag)
