"""Command-line entry point: ``naspoison <subcommand> --manifest M [--out DIR] ...``."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from ..attacks import dump_samples
from ..data import write_csv
from ..errors import ConfigurationError, FormatError, MethodologyError, TrialFailure
from ..search import retrain_from_scratch
from ..space import Genotype
from .manifest import KNOWN_ALGORITHMS, KNOWN_ATTACKS, load_manifest
from .report import render_report
from .runner import AuditRunner, budget_tag, condition_tag, retrain_config, run_search, split_pool

OUT_ENV = "NASPOISON_OUT"


def out_root(args, manifest: dict) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or manifest.get("output") or "runs")


def _runner(args, manifest: dict) -> AuditRunner:
    log = (lambda msg: print(msg, file=sys.stderr, flush=True)) if args.verbose else None
    return AuditRunner(manifest, out_root(args, manifest), resume=args.resume, workers=args.workers, log=log)


def _manifest(args) -> dict:
    m = load_manifest(args.manifest)
    if args.seed is not None:
        m["seed_base"] = int(args.seed)
    return m


def _print_csv(path: Path) -> None:
    print(f"--- {path.name} ---")
    sys.stdout.write(path.read_text())
    print("---")


def cmd_poison(args) -> int:
    m = _manifest(args)
    r = _runner(args, m)
    seed = int(m["seed_base"])
    pool = r.splits.pool
    if args.algorithm and "gc" in m["attacks"]:
        r.run_clean()
    for attack in m["attacks"]:
        for p in m["budgets"]:
            ds = r.poisoned_pool(attack, float(p), seed, args.algorithm) if attack != "gc" or args.algorithm \
                else r.gc_pool(None, float(p))
            stem = f"{attack}-{budget_tag(float(p)).rstrip('%')}pct"
            path = write_csv(ds, r.dir / "poisons" / f"{stem}.csv",
                             {"attack": attack, "budget": float(p), "seed": seed, "manifest_hash": r.hash})
            dump_samples(pool, ds, r.dir / "poisons" / f"{stem}-samples.csv")
            print(f"{attack}\t{p}\t{int(ds.poison_mask.sum())}\t{path}")
    return 0


def cmd_search(args) -> int:
    m = _manifest(args)
    r = _runner(args, m)
    seed = int(m["seed_base"])
    attack = args.attack
    p = float(args.budget) if attack != "clean" else 0.0
    if attack == "gc" and args.algorithm:
        r.run_clean()
    pool = r.poisoned_pool(attack, p, seed, args.algorithm)
    st, sv = split_pool(pool, r.splits.n_train)
    start = time.perf_counter()
    res = run_search(m, args.algorithm, st, sv, seed)
    res.wall_time = time.perf_counter() - start
    base = r.dir / "search" / f"{args.algorithm}-{condition_tag(attack, p).replace('%', 'pct')}-s{seed}"
    base.parent.mkdir(parents=True, exist_ok=True)
    res.save_json(base.with_suffix(".json"))
    if res.curves:
        res.save_curves(base.with_name(base.name + "-curves.csv"))
    print(res.genotype.to_text())
    print(f"written\t{base.with_suffix('.json')}")
    return 0


def _read_genotype(path: Path) -> Genotype:
    text = path.read_text()
    if path.suffix == ".json":
        return Genotype.from_text(json.loads(text)["genotype"])
    return Genotype.from_text(text)


def cmd_retrain(args) -> int:
    m = _manifest(args)
    r = _runner(args, m)
    g = _read_genotype(Path(args.genotype))
    seed = int(m["seed_base"])
    acc = 100.0 * retrain_from_scratch(g, r.splits.final_train, r.splits.test, seed=seed, config=retrain_config(m))
    out = r.dir / "retrain" / f"{Path(args.genotype).stem}-s{seed}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"genotype": g.to_text(), "seed": seed, "accuracy": acc}, indent=2) + "\n")
    print(f"accuracy\t{acc:.4f}")
    return 0


def _finish(r: AuditRunner) -> int:
    r.finalize()
    written = render_report(r.dir)
    _print_csv(r.dir / "report" / "table.csv")
    for path in written:
        print(f"written\t{path}")
    return 0


def cmd_audit(args) -> int:
    r = _runner(args, _manifest(args))
    r.run_attacks()
    r.run_defenses()
    return _finish(r)


def cmd_defend(args) -> int:
    m = _manifest(args)
    if not m["defenses"]:
        raise ConfigurationError("manifest lists no defenses")
    r = _runner(args, m)
    r.run_defenses()
    return _finish(r)


def cmd_ood(args) -> int:
    r = _runner(args, _manifest(args))
    r.run_ood()
    return _finish(r)


def cmd_sensitivity(args) -> int:
    r = _runner(args, _manifest(args))
    r.run_sensitivity()
    _print_csv(r.dir / "sensitivity.csv")
    return 0


def cmd_report(args) -> int:
    m = _manifest(args)
    from .manifest import manifest_hash

    run_dir = out_root(args, m) / manifest_hash(m)
    if not (run_dir / "manifest.json").exists():
        raise ConfigurationError(f"no run directory at {run_dir}")
    written = render_report(run_dir)
    _print_csv(run_dir / "report" / "table.csv")
    for path in written:
        print(f"written\t{path}")
    return 0


COMMANDS = {
    "poison": (cmd_poison, "craft and persist poisoned search pools"),
    "search": (cmd_search, "run one search on a (possibly poisoned) search pool"),
    "retrain": (cmd_retrain, "retrain a genotype from scratch on the clean final split"),
    "audit": (cmd_audit, "run the full algorithm x attack x budget x seed matrix"),
    "ood": (cmd_ood, "search on other datasets, retrain and test on the manifest dataset"),
    "sensitivity": (cmd_sensitivity, "proxy-metric shifts under poisoning at a 50%% budget"),
    "defend": (cmd_defend, "run the defended conditions"),
    "report": (cmd_report, "render tables and figures from a finished ledger"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="naspoison", description="Poisoning audits for architecture search.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (fn, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--manifest", required=True, help="experiment manifest (JSON)")
        p.add_argument("--seed", type=int, default=None, help="override the manifest seed_base")
        p.add_argument("--out", default=None, help=f"output root (default ${OUT_ENV}, then the manifest, then ./runs)")
        p.add_argument("--workers", type=int, default=None, help="parallel trial processes")
        p.add_argument("--resume", action="store_true", help="keep completed trials from an earlier run")
        p.add_argument("-v", "--verbose", action="store_true", help="log each trial to stderr")
        if name in ("poison", "search"):
            p.add_argument("--algorithm", choices=KNOWN_ALGORITHMS, default=None if name == "poison" else "diff",
                           help="search algorithm (GC targets its best clean result)")
        if name == "search":
            p.add_argument("--attack", choices=("clean",) + KNOWN_ATTACKS, default="clean")
            p.add_argument("--budget", type=float, default=0.5)
        if name == "retrain":
            p.add_argument("--genotype", required=True, help="genotype text file or search result JSON")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, FormatError, MethodologyError, TrialFailure, FileNotFoundError) as exc:
        print(f"naspoison {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
