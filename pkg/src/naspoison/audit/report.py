"""Report rendering from persisted ledgers: Markdown/CSV tables, ΔImp bar charts and genotype graphs.

Everything here reads ``trials.csv``, ``baseline.csv`` and ``manifest.json`` from
a run directory, so a report can be regenerated without rerunning any trial.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..space import to_dot
from ..stats import delta_imp, fmt2, mark_significant, significance_markdown, significance_table, summarize, \
    write_significance_csv
from .runner import condition_tag, genotype_from_field, read_records_csv

GAP = "--"


@dataclass(frozen=True)
class StoredTrial:
    kind: str
    algorithm: str
    condition: str
    seed: int
    genotype: str
    accuracy: float | None


def load_trials(run_dir) -> list:
    run_dir = Path(run_dir)
    rows = []
    for name in ("baseline.csv", "trials.csv"):
        path = run_dir / name
        if not path.exists():
            continue
        for d in read_records_csv(path):
            acc = float(d["accuracy"]) if d["accuracy"] else None
            rows.append(StoredTrial(d["kind"], d["algorithm"], d["condition"], int(d["seed"]), d["genotype"], acc))
    return rows


def expected_conditions(m: dict) -> list:
    return ["clean"] + [condition_tag(a, float(p)) for a in m["attacks"] for p in m["budgets"]]


def _groups(trials: list, kind: str) -> dict:
    out: dict = {}
    for t in sorted(trials, key=lambda t: t.seed):
        if t.kind == kind and t.accuracy is not None:
            out.setdefault(t.algorithm, {}).setdefault(t.condition, []).append(t.accuracy)
    return out


def baseline_mean(trials: list) -> float | None:
    accs = [t.accuracy for t in trials if t.kind == "baseline" and t.accuracy is not None]
    return float(np.mean(accs)) if accs else None


def main_table(trials: list, m: dict) -> tuple:
    """Rows (condition, {algorithm: (acc cell, ΔImp cell)}) plus the significance rows behind them."""
    base = baseline_mean(trials)
    groups = _groups(trials, "audit")
    algs = list(m["algorithms"])
    sig = {}
    if base is not None and groups:
        for r in significance_table(groups, base, m["alpha"]):
            sig[(r.algorithm, r.condition)] = r
    conds = expected_conditions(m)
    extra = sorted({c for g in groups.values() for c in g} - set(conds))
    table = []
    for cond in conds + extra:
        cells = {}
        for alg in algs:
            r = sig.get((alg, cond))
            if r is None:
                cells[alg] = (GAP, GAP)
            else:
                cells[alg] = (mark_significant(str(r.summary), r.significant),
                              mark_significant(fmt2(r.delta), r.significant))
        table.append((cond, cells))
    return table, [sig[k] for k in sorted(sig)], base


def render_main_markdown(table: list, algs: list, base: float | None) -> str:
    head = "| condition | " + " | ".join(f"{a} Acc. | {a} ΔImp" for a in algs) + " |"
    lines = [head, "|---" * (1 + 2 * len(algs)) + "|"]
    for cond, cells in table:
        lines.append(f"| {cond} | " + " | ".join(f"{cells[a][0]} | {cells[a][1]}" for a in algs) + " |")
    base_txt = GAP if base is None else fmt2(base)
    lines += ["", f"Random baseline mean accuracy: {base_txt}%. Significant drops (one-sided Welch, "
              "BH-controlled per algorithm) are underlined and bold; missing conditions show as --."]
    return "\n".join(lines) + "\n"


def write_main_csv(table: list, algs: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["condition"] + [f"{a}_{col}" for a in algs for col in ("acc", "delta_imp")])
        for cond, cells in table:
            w.writerow([cond] + [v for a in algs for v in cells[a]])


def _svg_figure():
    import matplotlib

    matplotlib.rcParams["svg.hashsalt"] = "naspoison"
    matplotlib.rcParams["svg.fonttype"] = "none"
    from matplotlib.figure import Figure

    return Figure(figsize=(8, 4))


def plot_delta_imp(sig_rows: list, algs: list, conds: list, path) -> Path:
    """Grouped bars of ΔImp per condition, one colour per algorithm."""
    fig = _svg_figure()
    ax = fig.add_subplot(1, 1, 1)
    lookup = {(r.algorithm, r.condition): r for r in sig_rows}
    width = 0.8 / max(1, len(algs))
    xs = np.arange(len(conds))
    for k, alg in enumerate(algs):
        vals = [lookup[(alg, c)].delta if (alg, c) in lookup else np.nan for c in conds]
        ax.bar(xs + k * width - 0.4 + width / 2, vals, width, label=alg)
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xticks(xs)
    ax.set_xticklabels(conds, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("ΔImp (percentage points)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    return Path(path)


def export_genotypes(trials: list, out_dir) -> list:
    """Best clean and worst poisoned genotype per algorithm as DOT graphs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for alg in sorted({t.algorithm for t in trials if t.kind == "audit"}):
        ok = [t for t in trials if t.kind == "audit" and t.algorithm == alg and t.accuracy is not None]
        clean = [t for t in ok if t.condition == "clean"]
        poisoned = [t for t in ok if t.condition != "clean"]
        picks = []
        if clean:
            picks.append(("best-clean", max(clean, key=lambda t: (t.accuracy, -t.seed))))
        if poisoned:
            picks.append(("worst-poisoned", min(poisoned, key=lambda t: (t.accuracy, t.condition, t.seed))))
        for label, t in picks:
            title = f"{alg} {label}: {t.condition} seed {t.seed} ({t.accuracy:.2f}%)"
            path = out_dir / f"{alg}-{label}.dot"
            path.write_text(to_dot(genotype_from_field(t.genotype), title))
            written.append(path)
    return written


def defense_table(trials: list, m: dict) -> list:
    base = baseline_mean(trials)
    audit = _groups(trials, "audit")
    rows = []
    for alg, conds in sorted(_groups(trials, "defense").items()):
        for cond, accs in sorted(conds.items()):
            defense, _, base_cond = cond.partition("+")
            und = audit.get(alg, {}).get(base_cond, [])
            rows.append([alg, defense, base_cond,
                         str(summarize(und)) if und else GAP,
                         fmt2(delta_imp(summarize(und).mean, base)) if und and base is not None else GAP,
                         str(summarize(accs)),
                         fmt2(delta_imp(summarize(accs).mean, base)) if base is not None else GAP])
    return rows


DEFENSE_HEADER = ["algorithm", "defense", "condition", "undefended acc", "undefended ΔImp", "defended acc",
                  "defended ΔImp"]


def ood_table(trials: list, m: dict) -> list:
    base = baseline_mean(trials)
    groups = _groups(trials, "ood")
    if base is None or not groups:
        return []
    clean = _groups(trials, "audit")
    merged = {alg: {"clean": clean.get(alg, {}).get("clean", []), **conds} for alg, conds in groups.items()}
    merged = {alg: {c: v for c, v in conds.items() if v} for alg, conds in merged.items()}
    return significance_table(merged, base, m["alpha"])


def _write_rows(path, header: list, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _markdown(header: list, rows: list) -> str:
    lines = ["| " + " | ".join(header) + " |", "|---" * len(header) + "|"]
    lines += ["| " + " | ".join(str(v) for v in r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def render_report(run_dir) -> list:
    """Write every table and figure the persisted records support; returns written paths."""
    run_dir = Path(run_dir)
    m = json.loads((run_dir / "manifest.json").read_text())
    trials = load_trials(run_dir)
    algs = list(m["algorithms"])
    out = run_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    written = []

    table, sig_rows, base = main_table(trials, m)
    (out / "table.md").write_text(render_main_markdown(table, algs, base))
    write_main_csv(table, algs, out / "table.csv")
    written += [out / "table.md", out / "table.csv"]
    if sig_rows:
        write_significance_csv(sig_rows, out / "significance.csv")
        (out / "significance.md").write_text(significance_markdown(sig_rows))
        conds = [c for c, _ in table]
        written += [out / "significance.csv", out / "significance.md",
                    plot_delta_imp(sig_rows, algs, conds, out / "delta_imp.svg")]
    written += export_genotypes(trials, out / "genotypes")

    d_rows = defense_table(trials, m)
    if d_rows:
        _write_rows(out / "defense.csv", DEFENSE_HEADER, d_rows)
        (out / "defense.md").write_text(_markdown(DEFENSE_HEADER, d_rows))
        written += [out / "defense.csv", out / "defense.md"]

    o_rows = ood_table(trials, m)
    if o_rows:
        write_significance_csv(o_rows, out / "ood.csv")
        (out / "ood.md").write_text(significance_markdown(o_rows))
        written += [out / "ood.csv", out / "ood.md"]

    for name in ("sensitivity.csv", "sensitivity.md"):
        if (run_dir / name).exists():
            written.append(run_dir / name)
    return written
