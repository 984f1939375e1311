import json
import xml.etree.ElementTree as ET
from dataclasses import replace

import numpy as np
import pytest

from naspoison.audit import (
    AuditRunner,
    TrialRecord,
    condition_tag,
    load_manifest,
    manifest_hash,
    reconcile_dimension,
    render_report,
    resolve,
    trial_seeds,
)
from naspoison.audit import cli, runner
from naspoison.audit.report import GAP, load_trials, main_table
from naspoison.audit.runner import Ledger, genotype_from_field, genotype_to_field
from naspoison.data import Dataset, generate_synthetic, write_csv
from naspoison.errors import ConfigurationError
from naspoison.space import from_dot, random_genotype

DATASET = {"kind": "blobs", "n": 120, "d": 4, "num_classes": 3, "seed": 0}
TINY = {
    "dataset": DATASET,
    "algorithms": {"diff": {"stages": [3], "drops": [], "epochs": [1], "batch_size": 32}},
    "attacks": ["rlf"],
    "budgets": [0.5],
    "seeds": 2,
    "baseline": {"samples": 2},
    "retrain": {"cells": 3, "epochs": 1},
    "surrogate": {"epochs": 2},
}


def tiny(**over):
    raw = json.loads(json.dumps(TINY))
    raw.update(over)
    return resolve(raw)


def write_manifest(tmp_path, **over):
    raw = json.loads(json.dumps(TINY))
    raw.update(over)
    path = tmp_path / "m.json"
    path.write_text(json.dumps(raw))
    return path


# ----------------------------------------------------------------- manifests


@pytest.mark.parametrize("bad", [
    {"bogus": 1},
    {"algorithms": {"evolution": {}}},
    {"attacks": ["backdoor"]},
    {"budgets": [0.0]},
    {"budgets": [1.5]},
    {"seeds": [1, 1]},
    {"seeds": 0},
    {"baseline": {"samples": 1}},
    {"defenses": ["diffusion"]},
    {"algorithms": {"diff": {"no_such_field": 1}}},
    {"ood": {"where": {}}},
    {"split": {"fractions": [0.5, 0.5, 0.5, 0.5]}},
])
def test_manifest_validation_rejects(bad):
    with pytest.raises(ConfigurationError):
        tiny(**bad)


def test_manifest_needs_dataset():
    with pytest.raises(ConfigurationError):
        resolve({"seeds": 2})


def test_manifest_hash_ignores_workers_and_output():
    a = tiny()
    assert manifest_hash(a) == manifest_hash(tiny(workers=4, output="/elsewhere"))
    assert manifest_hash(a) != manifest_hash(tiny(seeds=3))
    assert len(manifest_hash(a)) == 64


def test_trial_seeds():
    assert trial_seeds(tiny(seeds=3, seed_base=10)) == [10, 11, 12]
    assert trial_seeds(tiny(seeds=[5, 2])) == [5, 2]


def test_load_manifest_resolves_relative_paths(tmp_path):
    write_csv(generate_synthetic("blobs", 30, 4, 3, seed=0), tmp_path / "data" / "d.csv")
    path = write_manifest(tmp_path, dataset={"kind": "csv", "path": "data/d.csv", "num_classes": 3})
    m = load_manifest(path)
    assert m["dataset"]["path"] == str((tmp_path / "data" / "d.csv").resolve())
    (tmp_path / "broken.json").write_text("{")
    with pytest.raises(ConfigurationError):
        load_manifest(tmp_path / "broken.json")


def test_condition_tags():
    assert condition_tag("clean") == "clean"
    assert condition_tag("rlf", 0.5) == "rlf-50%"
    assert condition_tag("gc", 0.01) == "gc-1%"
    assert condition_tag("rlf", 0.5, defense="sanitize") == "sanitize+rlf-50%"
    assert condition_tag("clean", 0.0, source="rings") == "ood:rings"


def test_genotype_field_round_trip():
    g = random_genotype(np.random.default_rng(0))
    assert "\n" not in genotype_to_field(g)
    assert genotype_from_field(genotype_to_field(g)) == g


# -------------------------------------------------------------------- ledger


def test_ledger_skips_torn_lines_and_foreign_hashes(tmp_path):
    path = tmp_path / "t.jsonl"
    led = Ledger(path, "h1", resume=False)
    led.append(TrialRecord("audit", "diff", "clean", 0.0, 1, accuracy=50.0))
    with path.open("a") as fh:
        fh.write(json.dumps({"hash": "h2", "kind": "audit", "algorithm": "diff", "attack": "clean",
                             "budget": 0.0, "seed": 2}) + "\n")
        fh.write('{"hash": "h1", "kind"')
    again = Ledger(path, "h1", resume=True)
    assert list(again.records) == [("audit", "diff", "clean", 1)]
    assert Ledger(path, "h1", resume=False).records == {}
    assert not path.exists()


def test_reconcile_dimension():
    grid = Dataset(np.random.default_rng(0).uniform(0, 255, size=(5, 784)), np.zeros(5, dtype=int), 2,
                   grid_shape=(28, 28))
    small = reconcile_dimension(grid, 49)
    assert small.d == 49 and small.grid_shape == (7, 7)
    assert small.features[0, 0] == pytest.approx(grid.features[0].reshape(28, 28)[:4, :4].mean())
    flat = Dataset(np.arange(12.0).reshape(2, 6), np.zeros(2, dtype=int), 2)
    assert reconcile_dimension(flat, 3).features.tolist() == [[0.5, 2.5, 4.5], [6.5, 8.5, 10.5]]
    padded = reconcile_dimension(flat, 8)
    assert padded.d == 8 and np.all(padded.features[:, 6:] == 0)
    with pytest.raises(ConfigurationError):
        reconcile_dimension(flat, 4)


# -------------------------------------------------------------------- runs


@pytest.fixture(scope="module")
def audited(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    m = tiny()
    r = AuditRunner(m, out)
    r.run_attacks()
    r.finalize()
    render_report(r.dir)
    return m, r


def test_clean_run_records(tmp_path):
    r = AuditRunner(tiny(), tmp_path)
    r.run_clean()
    kinds = sorted((rec.kind, rec.seed) for rec in r.ledger.records.values())
    assert kinds == [("audit", 0), ("audit", 1), ("baseline", 0), ("baseline", 1)]
    for rec in r.ledger.select("audit"):
        assert rec.delta_imp == pytest.approx(rec.accuracy - r.baseline_mean())


def test_audit_ledger_and_csvs(audited):
    m, r = audited
    recs = r.ledger.select()
    assert len(recs) == 2 + 2 + 2
    header = (r.dir / "trials.csv").read_text().splitlines()[0]
    assert header == "kind,algorithm,condition,seed,genotype,accuracy,delta_imp,failed,reason"
    assert "wall_time" not in (r.dir / "trials.csv").read_text()
    conds = [row.condition for row in load_trials(r.dir) if row.kind == "audit"]
    assert conds == ["clean", "clean", "rlf-50%", "rlf-50%"]
    assert json.loads((r.dir / "manifest.json").read_text()) == json.loads(json.dumps(m))


def test_resume_never_recomputes(audited, monkeypatch):
    m, r = audited
    before = (r.dir / "trials.jsonl").read_bytes()

    def boom(task):
        raise AssertionError("completed trial recomputed")

    monkeypatch.setattr(runner, "execute_trial", boom)
    again = AuditRunner(m, r.dir.parent, resume=True)
    again.run_attacks()
    assert (r.dir / "trials.jsonl").read_bytes() == before


def test_resume_completes_missing_trials(tmp_path):
    m = tiny(attacks=[], seeds=1)
    AuditRunner(m, tmp_path).run_baseline()  # interrupted after the baseline
    r = AuditRunner(m, tmp_path, resume=True)
    assert len(r.ledger.records) == 2
    r.run_clean()
    lines = (r.dir / "trials.jsonl").read_text().splitlines()
    assert len(lines) == 3 and json.loads(lines[-1])["kind"] == "audit"


def test_two_runs_byte_identical(audited, tmp_path):
    m, r = audited
    other = AuditRunner(m, tmp_path)
    other.run_attacks()
    other.finalize()
    for name in ("trials.csv", "baseline.csv"):
        assert (other.dir / name).read_bytes() == (r.dir / name).read_bytes()


def test_parallel_workers_match_serial(audited, tmp_path):
    m, r = audited
    par = AuditRunner(m, tmp_path, workers=2)
    par.run_clean()
    par.finalize()
    serial = [rec.csv_row() for rec in r.ledger.select() if rec.attack == "clean"]
    assert [rec.csv_row() for rec in par.ledger.select()] == serial


def test_ood_with_same_dataset_reproduces_clean(tmp_path):
    m = tiny(attacks=[], ood={"search_dataset": dict(DATASET, name="twin")})
    r = AuditRunner(m, tmp_path)
    r.run_ood()
    clean = {rec.seed: rec.accuracy for rec in r.ledger.select("audit")}
    ood = {rec.seed: rec.accuracy for rec in r.ledger.select("ood")}
    assert ood == clean and len(ood) == 2
    assert {rec.condition for rec in r.ledger.select("ood")} == {"ood:twin"}


def test_defense_conditions(tmp_path):
    m = tiny(attacks=[], seeds=1, defenses=["sanitize", "relabel"], sanitize={"epochs": 2},
             defense_attacks=["rlf", "clean"])
    r = AuditRunner(m, tmp_path)
    r.run_defenses()
    r.finalize()
    conds = sorted(rec.condition for rec in r.ledger.select("defense"))
    assert conds == ["relabel+clean", "relabel+rlf-50%", "sanitize+clean", "sanitize+rlf-50%"]
    assert [rec.condition for rec in r.ledger.select("audit")] == ["clean", "rlf-50%"]
    render_report(r.dir)
    assert (r.dir / "report" / "defense.csv").exists()


def test_report_outputs(audited):
    m, r = audited
    rep = r.dir / "report"
    ET.parse(rep / "delta_imp.svg")
    for dot in sorted((rep / "genotypes").glob("*.dot")):
        g = from_dot(dot.read_text())
        assert genotype_to_field(g) in (r.dir / "trials.csv").read_text()
    assert {p.name for p in (rep / "genotypes").glob("*.dot")} == {"diff-best-clean.dot", "diff-worst-poisoned.dot"}
    md = (rep / "table.md").read_text()
    assert "| rlf-50% |" in md and "Random baseline mean accuracy" in md


def test_report_marks_gaps_and_significance(audited):
    m, r = audited
    trials = load_trials(r.dir)
    wide = dict(m, attacks=["rlf", "noise"])
    table, _, _ = main_table(trials, wide)
    cells = dict(table)
    assert cells["noise-50%"]["diff"] == (GAP, GAP)
    # a fabricated drop far below the clean runs must be flagged
    fake = [replace(t, accuracy=0.0 + t.seed) if t.condition == "rlf-50%" else t for t in trials]
    fake += [replace(t, seed=t.seed + 10, accuracy=0.5 + t.seed) for t in fake if t.condition == "rlf-50%"]
    fake += [replace(t, seed=t.seed + 10) for t in fake if t.condition == "clean" and t.seed < 10]
    table, sig, _ = main_table(fake, m)
    acc, delta = dict(table)["rlf-50%"]["diff"]
    assert acc.startswith("<u>**") and delta.startswith("<u>**")


def test_report_reproducible(audited):
    m, r = audited
    rep = r.dir / "report"
    first = {p.name: p.read_bytes() for p in rep.iterdir() if p.is_file()}
    render_report(r.dir)
    assert {p.name: p.read_bytes() for p in rep.iterdir() if p.is_file()} == first


# ----------------------------------------------------------------------- CLI


@pytest.mark.parametrize("argv", [["--help"]] + [[name, "--help"] for name in cli.COMMANDS])
def test_cli_help_renders(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 0 and "usage: naspoison" in capsys.readouterr().out


def test_cli_audit_and_report(tmp_path, capsys):
    path = write_manifest(tmp_path)
    out = tmp_path / "out"
    assert cli.main(["audit", "--manifest", str(path), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "--- table.csv ---" in text and "written\t" in text
    assert cli.main(["report", "--manifest", str(path), "--out", str(out)]) == 0
    assert "condition,diff_acc,diff_delta_imp" in capsys.readouterr().out


def test_cli_output_root_precedence(tmp_path, monkeypatch):
    path = write_manifest(tmp_path, output=str(tmp_path / "from-manifest"))
    args = cli.build_parser().parse_args(["report", "--manifest", str(path)])
    m = load_manifest(path)
    assert cli.out_root(args, m) == tmp_path / "from-manifest"
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert cli.out_root(args, m) == tmp_path / "env"
    args = cli.build_parser().parse_args(["report", "--manifest", str(path), "--out", str(tmp_path / "flag")])
    assert cli.out_root(args, m) == tmp_path / "flag"


def test_cli_poison_search_retrain(tmp_path, capsys):
    path = write_manifest(tmp_path, attacks=["rlf", "noise"])
    out = tmp_path / "out"
    assert cli.main(["poison", "--manifest", str(path), "--out", str(out)]) == 0
    lines = [ln.split("\t") for ln in capsys.readouterr().out.strip().splitlines()]
    assert [(a, int(k)) for a, _, k, _ in lines] == [("rlf", 30), ("noise", 30)]  # pool = 60 rows
    assert cli.main(["search", "--manifest", str(path), "--out", str(out), "--attack", "rlf"]) == 0
    written = capsys.readouterr().out.strip().splitlines()[-1].split("\t")[1]
    assert written.endswith("diff-rlf-50pct-s0.json")
    assert cli.main(["retrain", "--manifest", str(path), "--out", str(out), "--genotype", written]) == 0
    assert capsys.readouterr().out.startswith("accuracy\t")


def test_cli_errors_exit_2(tmp_path, capsys):
    path = write_manifest(tmp_path)
    out = str(tmp_path / "out")
    assert cli.main(["defend", "--manifest", str(path), "--out", out]) == 2
    assert cli.main(["ood", "--manifest", str(path), "--out", out]) == 2
    assert cli.main(["report", "--manifest", str(path), "--out", str(tmp_path / "none")]) == 2
    assert "naspoison defend" in capsys.readouterr().err


def test_cli_sensitivity(tmp_path, capsys):
    path = write_manifest(tmp_path, gc={"steps": 2, "craft_batch": 16},
                          sensitivity={"archs": 2, "clean_points": 30, "ntk_batch": 4,
                                       "attacks": ["rlf", "noise", "gc"]})
    assert cli.main(["sensitivity", "--manifest", str(path), "--out", str(tmp_path / "o")]) == 0
    text = capsys.readouterr().out
    assert "attack,kappa_ntk,regions" in text
    rlf_row = [ln for ln in text.splitlines() if ln.startswith("rlf,")][0].split(",")
    assert rlf_row[1] in ("0.00 ± 0.00%", "n/a") and rlf_row[2] == "0.00 ± 0.00%"
