"""How much each training-free metric moves when the probe data is poisoned."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..data import Dataset, fit_normalizer
from ..space import NetworkInstance, random_genotype
from .ntk import ntk_condition_number
from .regions import linear_regions
from .zero_cost import LOSS_METRICS, loss_based_scores

ALL_METRICS = ("kappa_ntk", "regions") + LOSS_METRICS


@dataclass
class MetricVector:
    values: dict
    unstable: frozenset = frozenset()
    batch_size: int = 0
    seed: int = 0

    def stable(self, name: str) -> bool:
        return name not in self.unstable and np.isfinite(self.values.get(name, np.nan))


def compute_metrics(net, x: np.ndarray, y: np.ndarray, ntk_batch: int = 32, seed: int = 0,
                    metrics=ALL_METRICS) -> MetricVector:
    """All metrics on normalized inputs ``x``; NTK uses the first ``ntk_batch`` rows."""
    values, unstable = {}, set()
    if "kappa_ntk" in metrics:
        r = ntk_condition_number(net, x[:ntk_batch])
        values["kappa_ntk"] = r.kappa
        if not r.stable:
            unstable.add("kappa_ntk")
    if "regions" in metrics:
        values["regions"] = float(linear_regions(net, x))
    if set(metrics) & set(LOSS_METRICS):
        scores = loss_based_scores(net, x, y)
        for k in LOSS_METRICS:
            if k in metrics:
                values[k] = scores[k]
                if not np.isfinite(scores[k]):
                    unstable.add(k)
    return MetricVector(values, frozenset(unstable), len(x), seed)


def percent_change(clean: float, poisoned: float) -> float | None:
    """100 (poisoned - clean) / |clean|; None when undefined."""
    if not (np.isfinite(clean) and np.isfinite(poisoned)):
        return None
    if clean == 0.0:
        return 0.0 if poisoned == 0.0 else None
    return 100.0 * (poisoned - clean) / abs(clean)


@dataclass
class SensitivityReport:
    # attack -> metric -> list of percentage changes over architectures
    changes: dict = field(default_factory=dict)
    excluded: dict = field(default_factory=dict)
    metrics: tuple = ALL_METRICS

    def stats(self, attack: str, metric: str) -> tuple:
        vals = np.asarray(self.changes[attack][metric], dtype=float)
        if vals.size == 0:
            return float("nan"), float("nan")
        std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        return float(vals.mean()), std

    def cell(self, attack: str, metric: str) -> str:
        mean, std = self.stats(attack, metric)
        if not np.isfinite(mean):
            return "n/a"
        return f"{_fmt(mean)} ± {_fmt(std)}%"

    def rows(self) -> list:
        return [[attack] + [self.cell(attack, m) for m in self.metrics] for attack in self.changes]

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["attack", *self.metrics])
            w.writerows(self.rows())
            excl = [[a, *[self.excluded[a][m] for m in self.metrics]] for a in self.changes]
            if any(any(r[1:]) for r in excl):
                w.writerow([])
                w.writerow(["excluded_unstable", *self.metrics])
                w.writerows(excl)


def _fmt(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def sensitivity_analysis(n_archs: int, clean: Dataset, poisoned: dict, seed: int = 0,
                         clean_points: int = 1000, ntk_batch: int = 32, cells: int = 3,
                         width: int = 16, metrics=ALL_METRICS) -> SensitivityReport:
    """Same architectures, same initial weights and same row indices for clean and poisoned data.

    ``poisoned`` maps attack name to a dataset row-aligned with ``clean``.
    """
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(clean.n, size=min(clean_points, clean.n), replace=False))
    norm = fit_normalizer(clean.features)
    x_clean, y_clean = norm.transform(clean.features[idx]), clean.labels[idx]
    probes = {}
    for attack, ds in poisoned.items():
        if ds.n != clean.n or ds.d != clean.d:
            raise ValueError(f"{attack}: poisoned dataset not row-aligned with the clean one")
        probes[attack] = (norm.transform(ds.features[idx]), ds.labels[idx])

    report = SensitivityReport({a: {m: [] for m in metrics} for a in poisoned},
                               {a: {m: 0 for m in metrics} for a in poisoned}, tuple(metrics))
    for i in range(n_archs):
        geno = random_genotype(rng)
        net_seed = seed * 100003 + i
        net = NetworkInstance(geno, cells, width, clean.d, clean.num_classes, seed=net_seed)
        base = compute_metrics(net, x_clean, y_clean, ntk_batch, net_seed, metrics)
        for attack, (xp, yp) in probes.items():
            pv = compute_metrics(net, xp, yp, ntk_batch, net_seed, metrics)
            for m in metrics:
                ch = None
                if base.stable(m) and pv.stable(m):
                    ch = percent_change(base.values[m], pv.values[m])
                if ch is None:
                    report.excluded[attack][m] += 1
                else:
                    report.changes[attack][m].append(ch)
    return report
