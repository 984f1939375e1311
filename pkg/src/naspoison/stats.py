"""Significance machinery: improvement over random, one-sided Welch tests, BH step-up, summaries."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError


def delta_imp(condition_mean: float, baseline_mean: float) -> float:
    """Percentage-point change of a condition over the random baseline (both in percent)."""
    return condition_mean - baseline_mean


# ------------------------------------------------------------- t distribution


def _betacf(a: float, b: float, x: float, max_iter: int = 300, eps: float = 1e-16) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    return h


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf(t: float, df: float) -> float:
    """P(T_df > t)."""
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    x = df / (df + t * t)
    tail = 0.5 * betainc(0.5 * df, 0.5, x)
    return tail if t > 0 else 1.0 - tail


# ---------------------------------------------------------------- Welch test


@dataclass(frozen=True)
class TestOutcome:
    __test__ = False  # not a pytest class

    t: float
    df: float
    p: float
    degenerate: bool = False
    reject: bool | None = None  # set by BH

    def with_reject(self, flag: bool) -> "TestOutcome":
        return TestOutcome(self.t, self.df, self.p, self.degenerate, bool(flag))


def welch_statistic(a, b) -> tuple:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ConfigurationError("Welch test needs at least 2 values per sample")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    diff = a.mean() - b.mean()
    se2 = va + vb
    if se2 == 0.0:
        return float(diff), 0.0, float("nan")
    t = diff / math.sqrt(se2)
    df = se2 * se2 / (va * va / (a.size - 1) + vb * vb / (b.size - 1))
    return float(diff), float(t), float(df)


def welch_one_sided(sample_a, sample_b) -> TestOutcome:
    """Test mean(a) > mean(b) (a = clean, b = poisoned) with unequal variances."""
    diff, t, df = welch_statistic(sample_a, sample_b)
    if math.isnan(df):
        # both samples constant: equal means give the continuity value, otherwise certainty
        if diff == 0.0:
            return TestOutcome(0.0, float("inf"), 0.5, True)
        return TestOutcome(math.copysign(math.inf, diff), float("inf"), 0.0 if diff > 0 else 1.0, True)
    return TestOutcome(t, df, min(1.0, max(0.0, t_sf(t, df))))


# ------------------------------------------------------- Benjamini-Hochberg


def bh_fdr(p_values, alpha: float = 0.05) -> np.ndarray:
    p = np.asarray(p_values, dtype=float)
    if p.size == 0:
        raise ConfigurationError("BH needs at least one p-value")
    m = p.size
    order = np.argsort(p, kind="stable")
    thresh = alpha * np.arange(1, m + 1) / m
    passed = np.flatnonzero(p[order] <= thresh)
    flags = np.zeros(m, dtype=bool)
    if passed.size:
        cutoff = p[order][passed[-1]]
        flags = p <= cutoff
    return flags


# -------------------------------------------------------------- summaries


@dataclass(frozen=True)
class Summary:
    mean: float
    std: float
    n: int

    def __str__(self) -> str:
        return f"{fmt2(self.mean)} ± {fmt2(self.std)}"


def summarize(samples) -> Summary:
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ConfigurationError("cannot summarize an empty sample")
    std = float(x.std(ddof=1)) if x.size > 1 else 0.0
    return Summary(float(x.mean()), std, int(x.size))


def fmt2(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def mark_significant(text: str, significant: bool) -> str:
    return f"<u>**{text}**</u>" if significant else text


@dataclass
class SignificanceRow:
    algorithm: str
    condition: str
    summary: Summary
    delta: float
    outcome: TestOutcome | None = None

    @property
    def significant(self) -> bool:
        return bool(self.outcome is not None and self.outcome.reject)


def significance_table(per_algorithm: dict, baseline_mean: float, alpha: float = 0.05) -> list:
    """``per_algorithm[alg] = {"clean": [...], condition: [...]}`` in percent.

    Each non-clean condition is tested against clean; BH runs per algorithm.
    """
    rows = []
    for alg in sorted(per_algorithm):
        conds = per_algorithm[alg]
        clean = conds.get("clean")
        tested = []
        for cond in sorted(conds, key=lambda c: (c != "clean", c)):
            s = summarize(conds[cond])
            row = SignificanceRow(alg, cond, s, delta_imp(s.mean, baseline_mean))
            if cond != "clean" and clean is not None and len(clean) >= 2 and len(conds[cond]) >= 2:
                row.outcome = welch_one_sided(clean, conds[cond])
                tested.append(row)
            rows.append(row)
        if tested:
            flags = bh_fdr([r.outcome.p for r in tested], alpha)
            for r, f in zip(tested, flags):
                r.outcome = r.outcome.with_reject(f)
    return rows


def write_significance_csv(rows: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algorithm", "condition", "n", "mean", "std", "delta_imp", "t", "df", "p", "significant"])
        for r in rows:
            o = r.outcome
            w.writerow([r.algorithm, r.condition, r.summary.n, fmt2(r.summary.mean), fmt2(r.summary.std),
                        fmt2(r.delta), "" if o is None else f"{o.t:.6g}", "" if o is None else f"{o.df:.6g}",
                        "" if o is None else f"{o.p:.6g}", int(r.significant)])


def significance_markdown(rows: list) -> str:
    lines = ["| algorithm | condition | acc. (mean ± std) | ΔImp | p |", "|---|---|---|---|---|"]
    for r in rows:
        p = "" if r.outcome is None else f"{r.outcome.p:.4f}"
        lines.append(f"| {r.algorithm} | {r.condition} | {mark_significant(str(r.summary), r.significant)} | "
                     f"{mark_significant(fmt2(r.delta), r.significant)} | {p} |")
    return "\n".join(lines) + "\n"


def ensure_parent(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path
