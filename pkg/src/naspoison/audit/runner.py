"""Audit orchestration: poisoned search pools, trial execution, resumable ledgers and statistics.

Only the search pool (search-train plus search-val) is ever tampered with. Final
training and test splits stay clean, and every trial retrains its searched
genotype from scratch on them.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import __version__
from ..attacks import GcConfig, clf, gaussian_noise, nas_gc, rlf, train_surrogate
from ..data import Dataset, SplitSpec, average_pool, concat_datasets, split
from ..defense import PenultimateExtractor, RelabelConfig, SanitizationConfig, cluster_relabel, loss_sanitize
from ..errors import ConfigurationError, TrialFailure
from ..metrics import sensitivity_analysis
from ..search import (
    DiffSearchConfig,
    HybridSearchConfig,
    RetrainConfig,
    TfSearchConfig,
    diff_search,
    hybrid_search,
    require_clean,
    retrain_from_scratch,
    tf_search,
    train_instance,
)
from ..space import Genotype, random_genotype
from ..stats import significance_table
from .manifest import load_dataset, manifest_hash, trial_seeds

ATTACK_CODES = {"clean": 0, "rlf": 1, "clf": 2, "noise": 3, "gc": 4, "identity": 5}
KIND_ORDER = {"baseline": 0, "audit": 1, "defense": 2, "ood": 3}
CSV_FIELDS = ["kind", "algorithm", "condition", "seed", "genotype", "accuracy", "delta_imp", "failed", "reason"]
SENSITIVITY_BUDGET = 0.5


def budget_tag(p: float) -> str:
    return f"{p * 100:g}%"


def condition_tag(attack: str, budget: float = 0.0, defense: str = "", source: str = "") -> str:
    tag = "clean" if attack == "clean" else f"{attack}-{budget_tag(budget)}"
    if defense:
        tag = f"{defense}+{tag}"
    if source:
        tag = f"ood:{source}"
    return tag


def genotype_to_field(g: Genotype) -> str:
    return g.to_text().replace("\n", " ; ")


def genotype_from_field(text: str) -> Genotype:
    return Genotype.from_text(text.replace(" ; ", "\n"))


@dataclass
class TrialRecord:
    kind: str  # baseline | audit | defense | ood
    algorithm: str
    attack: str
    budget: float
    seed: int
    defense: str = ""
    source: str = ""  # search dataset name for OOD trials
    genotype: str = ""
    accuracy: float | None = None  # percent
    delta_imp: float | None = None
    wall_time: float = 0.0
    failed: bool = False
    reason: str = ""

    @property
    def condition(self) -> str:
        return condition_tag(self.attack, self.budget, self.defense, self.source)

    @property
    def key(self) -> tuple:
        return (self.kind, self.algorithm, self.condition, self.seed)

    def sort_key(self) -> tuple:
        return (KIND_ORDER[self.kind], self.algorithm, self.source, self.defense, self.attack != "clean",
                self.attack, self.budget, self.seed)

    def csv_row(self) -> list:
        acc = "" if self.accuracy is None else repr(float(self.accuracy))
        delta = "" if self.delta_imp is None else repr(float(self.delta_imp))
        return [self.kind, self.algorithm, self.condition, self.seed, self.genotype, acc, delta,
                int(self.failed), self.reason]


class Ledger:
    """Append-only JSON-lines record store; the orchestrator is its only writer."""

    def __init__(self, path: Path, mhash: str, resume: bool):
        self.path = Path(path)
        self.hash = mhash
        self.records: dict = {}
        if not resume and self.path.exists():
            self.path.unlink()
        if self.path.exists():
            for line in self.path.read_text().splitlines():
                try:
                    d = json.loads(line)
                except json.JSONDecodeError:
                    continue  # torn final line from an interrupted write
                if d.pop("hash", None) != mhash:
                    continue
                rec = TrialRecord(**d)
                self.records[rec.key] = rec

    def __contains__(self, key) -> bool:
        return key in self.records

    def append(self, rec: TrialRecord) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a") as fh:
            fh.write(json.dumps({"hash": self.hash, **asdict(rec)}, sort_keys=True) + "\n")
            fh.flush()
        self.records[rec.key] = rec

    def select(self, kind: str | None = None, algorithm: str | None = None) -> list:
        out = [r for r in self.records.values()
               if (kind is None or r.kind == kind) and (algorithm is None or r.algorithm == algorithm)]
        return sorted(out, key=TrialRecord.sort_key)


@dataclass
class Splits:
    search_train: Dataset
    search_val: Dataset
    final_train: Dataset
    test: Dataset

    @property
    def pool(self) -> Dataset:
        return concat_datasets([self.search_train, self.search_val])[0]

    @property
    def n_train(self) -> int:
        return self.search_train.n


def prepare_splits(dataset: Dataset, split_spec: dict) -> Splits:
    parts = split(dataset, SplitSpec(tuple(split_spec["fractions"]), int(split_spec.get("seed", 0))))
    s = Splits(*parts)
    require_clean(s.final_train, "final-train")
    require_clean(s.test, "test")
    return s


def split_pool(pool: Dataset, n_train: int) -> tuple:
    if not 0 < n_train < pool.n:
        raise ConfigurationError(f"search pool of {pool.n} rows cannot keep {n_train} training rows and a val split")
    return pool.subset(np.arange(n_train)), pool.subset(np.arange(n_train, pool.n))


def reconcile_dimension(ds: Dataset, d: int) -> Dataset:
    """Map features to ``d`` columns: block averaging for grids and divisible widths, zero padding below."""
    if ds.d == d:
        return ds
    if ds.grid_shape is not None and len(ds.grid_shape) == 2:
        side = math.isqrt(d)
        h, w = ds.grid_shape
        if side * side == d and h % side == 0 and w % side == 0:
            x = average_pool(ds.features.reshape(ds.n, h, w), side).reshape(ds.n, d)
            return replace(ds, features=x, grid_shape=(side, side))
    if ds.d > d and ds.d % d == 0:
        return replace(ds, features=ds.features.reshape(ds.n, d, ds.d // d).mean(axis=2), grid_shape=None)
    if ds.d < d:
        x = np.concatenate([ds.features, np.zeros((ds.n, d - ds.d))], axis=1)
        return replace(ds, features=x, grid_shape=None)
    raise ConfigurationError(f"cannot reconcile {ds.d} features with the target's {d}")


def attack_rng(seed: int, attack: str, p: float) -> np.random.Generator:
    return np.random.default_rng([int(seed), ATTACK_CODES[attack], int(round(p * 1e6))])


def _with_augmentation(cfg: dict, augmentation) -> dict:
    cfg = dict(cfg)
    if augmentation is not None:
        cfg.setdefault("augmentation", augmentation)
    return cfg


def retrain_config(m: dict) -> RetrainConfig:
    return RetrainConfig.from_dict(_with_augmentation(m["retrain"], m["augmentation"]))


def run_search(m: dict, algorithm: str, search_train: Dataset, search_val: Dataset, seed: int):
    """One search on the given (possibly poisoned) search splits with the trial seed."""
    cfg = dict(m["algorithms"][algorithm], seed=seed)
    if algorithm == "diff":
        return diff_search(search_train, search_val,
                           DiffSearchConfig.from_dict(_with_augmentation(cfg, m["augmentation"])))
    if algorithm == "training_free":
        pool = concat_datasets([search_train, search_val])[0]
        return tf_search(pool, TfSearchConfig.from_dict(cfg))
    if algorithm == "hybrid":
        return hybrid_search(search_train, search_val, HybridSearchConfig.from_dict(cfg))
    raise ConfigurationError(f"unknown algorithm {algorithm!r}")


@dataclass
class TrialTask:
    record: TrialRecord
    manifest: dict
    final_train: Dataset
    test: Dataset
    pool: Dataset | None = None
    n_train: int = 0


def execute_trial(task: TrialTask) -> TrialRecord:
    """Search (unless baseline), then retrain on clean data. Divergence becomes a failed record."""
    rec = replace(task.record)
    start = time.perf_counter()
    try:
        if rec.kind == "baseline":
            genotype = random_genotype(np.random.default_rng(rec.seed))
        else:
            st, sv = split_pool(task.pool, task.n_train)
            genotype = run_search(task.manifest, rec.algorithm, st, sv, rec.seed).genotype
        rec.genotype = genotype_to_field(genotype)
        acc = retrain_from_scratch(genotype, task.final_train, task.test, seed=rec.seed,
                                   config=retrain_config(task.manifest))
        rec.accuracy = 100.0 * acc
    except (TrialFailure, FloatingPointError, np.linalg.LinAlgError) as exc:
        rec.failed = True
        rec.reason = f"{type(exc).__name__}: {exc}"
        rec.accuracy = None
    rec.wall_time = time.perf_counter() - start
    return rec


@dataclass
class RunLedger:
    manifest_hash: str
    directory: Path
    records: list
    baseline_mean: float | None
    tables: dict = field(default_factory=dict)
    version: str = __version__


class AuditRunner:
    """Runs manifest conditions into ``<out>/<manifest-hash>/``."""

    def __init__(self, manifest: dict, out_root, resume: bool = False, workers: int | None = None,
                 log=None):
        self.m = manifest
        self.hash = manifest_hash(manifest)
        self.dir = Path(out_root) / self.hash
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        self.workers = int(manifest["workers"] if workers is None else workers)
        self.log = log or (lambda msg: None)
        self.seeds = trial_seeds(manifest)
        self.splits = prepare_splits(load_dataset(manifest["dataset"]), manifest["split"])
        self.ledger = Ledger(self.dir / "trials.jsonl", self.hash, resume)
        self._surrogate = None
        self._extractor = None
        self._gc_cache: dict = {}

    # ------------------------------------------------------------ execution

    def _execute(self, tasks: list) -> None:
        tasks = [t for t in tasks if t.record.key not in self.ledger]
        if not tasks:
            return
        tasks.sort(key=lambda t: t.record.sort_key())
        self.log(f"running {len(tasks)} trials")
        if self.workers > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=self.workers) as pool:
                for rec in pool.map(execute_trial, tasks):
                    self._store(rec)
        else:
            for task in tasks:
                self._store(execute_trial(task))

    def _store(self, rec: TrialRecord) -> None:
        if rec.kind != "baseline" and rec.accuracy is not None:
            rec.delta_imp = rec.accuracy - self.baseline_mean()
        self.ledger.append(rec)
        status = "failed" if rec.failed else f"{rec.accuracy:.2f}%"
        self.log(f"{rec.kind} {rec.algorithm} {rec.condition} seed={rec.seed}: {status}")

    def _task(self, rec: TrialRecord, pool: Dataset | None = None, n_train: int | None = None) -> TrialTask:
        return TrialTask(rec, self.m, self.splits.final_train, self.splits.test, pool,
                         self.splits.n_train if n_train is None else n_train)

    # ------------------------------------------------------------- baseline

    def baseline_seeds(self) -> list:
        return [int(self.m["seed_base"]) + i for i in range(int(self.m["baseline"].get("samples", 10)))]

    def run_baseline(self) -> None:
        self._execute([self._task(TrialRecord("baseline", "random", "clean", 0.0, s)) for s in self.baseline_seeds()])

    def baseline_mean(self) -> float:
        accs = [r.accuracy for r in self.ledger.select("baseline") if r.accuracy is not None]
        if not accs:
            raise TrialFailure("every random-baseline trial failed")
        return float(np.mean(accs))

    # -------------------------------------------------------------- poisons

    def surrogate(self):
        if self._surrogate is None:
            cfg = self.m["surrogate"]
            self._surrogate = train_surrogate(self.splits.pool, int(self.m["seed_base"]),
                                              int(cfg.get("hidden", 32)), int(cfg.get("epochs", 30)))
        return self._surrogate

    def gc_config(self) -> GcConfig:
        return GcConfig.from_dict(self.m["gc"])

    def _best_clean(self, algorithm: str) -> TrialRecord:
        ok = [r for r in self.ledger.select("audit", algorithm) if r.attack == "clean" and r.accuracy is not None]
        if not ok:
            raise TrialFailure(f"no successful clean {algorithm} trial to target")
        return max(ok, key=lambda r: (r.accuracy, -r.seed))

    def gc_pool(self, algorithm: str | None, p: float):
        """GC poisons crafted once per (algorithm, budget) against the best clean search outcome.

        ``algorithm=None`` targets the surrogate classifier instead.
        """
        key = (algorithm, p)
        if key in self._gc_cache:
            return self._gc_cache[key]
        pool = self.splits.pool
        cfg = self.gc_config()
        target = cfg.target
        if algorithm is None:
            net, norm = self.surrogate()
            artifacts = {"model": net, "normalizer": norm}
            target = "model_weights"
        elif algorithm == "diff":
            best = self._best_clean(algorithm)
            st, sv = split_pool(pool, self.splits.n_train)
            res = run_search(self.m, algorithm, st, sv, best.seed)
            artifacts = {"supernet": res.artifacts["supernet"], "model": res.artifacts["supernet"],
                         "normalizer": res.artifacts["normalizer"]}
        else:
            # discrete searchers have no architecture parameters; target the best clean genotype's weights
            best = self._best_clean(algorithm)
            rc = retrain_config(self.m)
            net, norm, _ = train_instance(genotype_from_field(best.genotype), pool, rc.epochs, best.seed, rc)
            artifacts = {"model": net, "normalizer": norm}
            target = "model_weights"
        result = nas_gc(target, artifacts, pool, p, attack_rng(self.m["seed_base"], "gc", p), cfg)
        name = algorithm or "surrogate"
        result.write_trajectory(self.dir / "poisons" / f"gc-{name}-{budget_tag(p).rstrip('%')}pct-trajectory.csv")
        self._gc_cache[key] = result.dataset
        return result.dataset

    def poisoned_pool(self, attack: str, p: float, seed: int, algorithm: str | None) -> Dataset:
        pool = self.splits.pool
        if attack in ("clean", "identity"):
            return pool
        if attack == "rlf":
            return rlf(pool, p, attack_rng(seed, attack, p))
        if attack == "noise":
            cfg = self.m["noise"]
            return gaussian_noise(pool, p, attack_rng(seed, attack, p), float(cfg.get("sigma", 16.0)),
                                  float(cfg.get("epsilon", 16.0)))
        if attack == "clf":
            net, norm = self.surrogate()
            return clf(pool, p, net, norm)
        if attack == "gc":
            return self.gc_pool(algorithm, p)
        raise ConfigurationError(f"unknown attack {attack!r}")

    # ------------------------------------------------------------ matrices

    def run_clean(self) -> None:
        self.run_baseline()
        tasks = [self._task(TrialRecord("audit", alg, "clean", 0.0, s), self.splits.pool)
                 for alg in self.m["algorithms"] for s in self.seeds]
        self._execute(tasks)

    def run_attacks(self) -> None:
        self.run_clean()
        for alg in self.m["algorithms"]:
            for attack in self.m["attacks"]:
                for p in self.m["budgets"]:
                    pending = [s for s in self.seeds
                               if ("audit", alg, condition_tag(attack, p), s) not in self.ledger]
                    tasks = []
                    for s in pending:
                        rec = TrialRecord("audit", alg, attack, float(p), s)
                        try:
                            pool = self.poisoned_pool(attack, float(p), s, alg)
                        except TrialFailure as exc:
                            rec.failed, rec.reason = True, f"poison crafting: {exc}"
                            self._store(rec)
                            continue
                        tasks.append(self._task(rec, pool))
                    self._execute(tasks)

    def extractor(self) -> PenultimateExtractor:
        if self._extractor is None:
            cfg = RelabelConfig.from_dict(self.m["relabel"])
            san = SanitizationConfig.from_dict(self.m["sanitize"])
            self._extractor = PenultimateExtractor(self.splits.final_train, san.hidden, san.epochs, cfg.seed)
        return self._extractor

    def defended_pool(self, defense: str, pool: Dataset) -> tuple:
        n_train = self.splits.n_train
        if defense == "sanitize":
            filtered, keep = loss_sanitize(pool, SanitizationConfig.from_dict(self.m["sanitize"]))
            return filtered, int((keep < n_train).sum())
        if defense == "relabel":
            relabeled, _ = cluster_relabel(pool, self.extractor(), RelabelConfig.from_dict(self.m["relabel"]))
            return relabeled, n_train
        raise ConfigurationError(f"unknown defense {defense!r}")

    def run_defenses(self) -> None:
        if not self.m["defenses"]:
            return
        self.run_clean()
        for defense in self.m["defenses"]:
            for alg in self.m["algorithms"]:
                for attack in self.m["defense_attacks"]:
                    budgets = [0.0] if attack == "clean" else self.m["defense_budgets"]
                    for p in budgets:
                        # undefended reference for the same condition
                        if attack != "clean":
                            self._execute([self._task(TrialRecord("audit", alg, attack, float(p), s),
                                                      self.poisoned_pool(attack, float(p), s, alg))
                                           for s in self.seeds
                                           if ("audit", alg, condition_tag(attack, p), s) not in self.ledger])
                        tasks = []
                        for s in self.seeds:
                            rec = TrialRecord("defense", alg, attack, float(p), s, defense=defense)
                            if rec.key in self.ledger:
                                continue
                            pool, n_train = self.defended_pool(defense, self.poisoned_pool(attack, float(p), s, alg))
                            tasks.append(self._task(rec, pool, n_train))
                        self._execute(tasks)

    def run_ood(self) -> None:
        ood = self.m.get("ood")
        if not ood:
            raise ConfigurationError("manifest has no 'ood' section")
        self.run_clean()
        target = self.splits.final_train
        for spec in ood_sources(ood):
            src = reconcile_dimension(load_dataset(spec), target.d)
            s = prepare_splits(src, self.m["split"])
            tasks = [self._task(TrialRecord("ood", alg, "clean", 0.0, seed, source=src.name), s.pool, s.n_train)
                     for alg in self.m["algorithms"] for seed in self.seeds]
            self._execute(tasks)

    def run_sensitivity(self):
        cfg = self.m["sensitivity"]
        pool = self.splits.pool
        p = SENSITIVITY_BUDGET
        poisoned = {}
        for attack in cfg.get("attacks", ["rlf", "clf", "noise", "gc"]):
            poisoned[attack] = (self.gc_pool(None, p) if attack == "gc"
                                else self.poisoned_pool(attack, p, int(self.m["seed_base"]), None))
        report = sensitivity_analysis(int(cfg.get("archs", 100)), pool, poisoned, seed=int(self.m["seed_base"]),
                                      clean_points=int(cfg.get("clean_points", 1000)),
                                      ntk_batch=int(cfg.get("ntk_batch", 32)), cells=int(cfg.get("cells", 3)),
                                      width=int(cfg.get("width", 16)))
        report.write_csv(self.dir / "sensitivity.csv")
        (self.dir / "sensitivity.md").write_text(sensitivity_markdown(report))
        return report

    # -------------------------------------------------------------- outputs

    def finalize(self) -> RunLedger:
        records = sorted(self.ledger.records.values(), key=TrialRecord.sort_key)
        write_records_csv([r for r in records if r.kind != "baseline"], self.dir / "trials.csv")
        write_records_csv([r for r in records if r.kind == "baseline"], self.dir / "baseline.csv")
        base = None
        tables = {}
        if any(r.kind == "baseline" and r.accuracy is not None for r in records):
            base = self.baseline_mean()
            tables["significance"] = significance_table(accuracy_groups(records, "audit"), base, self.m["alpha"])
            ood = accuracy_groups(records, "ood", with_clean=True)
            if any(len(v) > 1 for v in ood.values()):
                tables["ood"] = significance_table(ood, base, self.m["alpha"])
        return RunLedger(self.hash, self.dir, records, base, tables)


def ood_sources(ood: dict) -> list:
    sources = list(ood.get("search_datasets", []))
    if ood.get("search_dataset"):
        sources.insert(0, ood["search_dataset"])
    if not sources:
        raise ConfigurationError("'ood' needs 'search_dataset' or 'search_datasets'")
    return sources


def accuracy_groups(records: list, kind: str, with_clean: bool = False) -> dict:
    """``{algorithm: {condition: [accuracy, ...]}}`` over successful trials, seeds ascending."""
    out: dict = {}
    for r in sorted(records, key=TrialRecord.sort_key):
        if r.accuracy is None:
            continue
        take = r.kind == kind or (with_clean and r.kind == "audit" and r.attack == "clean")
        if take:
            out.setdefault(r.algorithm, {}).setdefault(r.condition, []).append(r.accuracy)
    return out


def write_records_csv(records: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in records:
            w.writerow(r.csv_row())


def read_records_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def sensitivity_markdown(report) -> str:
    lines = ["| attack | " + " | ".join(report.metrics) + " |", "|---" * (len(report.metrics) + 1) + "|"]
    for row in report.rows():
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"
