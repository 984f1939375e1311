"""Experiment manifests: schema defaults, validation, canonical hashing and dataset resolution.

Manifest keys (JSON object):

  name           free-form label
  dataset        {"kind": "blobs"|"moons"|"rings", "n", "d", "num_classes", "seed", ...generator options}
                 | {"kind": "idx", "images", "labels", "downsample_to"} | {"kind": "csv", "path", "num_classes"}
  split          {"fractions": [search_train, search_val, final_train, test], "seed"}
  algorithms     {"diff"|"training_free"|"hybrid": config object}
  attacks        subset of ["rlf", "clf", "noise", "gc", "identity"]
  budgets        poisoning fractions, e.g. [0.01, 0.1, 0.5]
  seeds          trial count (int) or explicit list; trial i uses seed_base + i
  seed_base      int
  baseline       {"samples": R}
  retrain        retraining config (cells, width, epochs, lr, batch_size, ...)
  augmentation   null or {"enabled", "jitter_sigma", "mask_prob", "shift", "hflip"}; used by search and retraining
  noise          {"sigma", "epsilon"}
  gc             gradient-canceling config
  surrogate      {"hidden", "epochs"} for confidence-ranked flipping
  defenses       subset of ["sanitize", "relabel"], with "sanitize"/"relabel" config objects,
                 applied to "defense_attacks" (may include "clean") x "defense_budgets"
  ood            {"search_dataset": dataset object} and/or {"search_datasets": [...]}; architectures are
                 searched there and retrained/tested on ``dataset``
  sensitivity    {"archs", "clean_points", "ntk_batch", "attacks", "cells", "width"}
  alpha          FDR level
  workers        parallel trial processes (not part of the hash)
  output         default output root (not part of the hash)
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import replace
from pathlib import Path

from ..data import SplitSpec, generate_synthetic, load_idx, read_csv
from ..errors import ConfigurationError

KNOWN_ALGORITHMS = ("diff", "training_free", "hybrid")
KNOWN_ATTACKS = ("rlf", "clf", "noise", "gc", "identity")
KNOWN_DEFENSES = ("sanitize", "relabel")
UNHASHED_KEYS = ("workers", "output")

DEFAULTS = {
    "name": "audit",
    "split": {"fractions": [0.4, 0.1, 0.4, 0.1], "seed": 0},
    "algorithms": {"diff": {}},
    "attacks": ["rlf", "clf", "noise", "gc"],
    "budgets": [0.01, 0.1, 0.5],
    "seeds": 10,
    "seed_base": 0,
    "baseline": {"samples": 10},
    "retrain": {},
    "augmentation": None,
    "noise": {"sigma": 16.0, "epsilon": 16.0},
    "gc": {},
    "surrogate": {"hidden": 32, "epochs": 30},
    "defenses": [],
    "sanitize": {},
    "relabel": {},
    "defense_attacks": ["rlf"],
    "defense_budgets": [0.5],
    "ood": None,
    "sensitivity": {"archs": 100, "clean_points": 1000, "ntk_batch": 32, "attacks": ["rlf", "clf", "noise", "gc"]},
    "alpha": 0.05,
    "workers": 1,
    "output": None,
}


def load_manifest(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
    base = Path(path).resolve().parent
    return resolve(raw, base)


def resolve(raw: dict, base_dir: Path | None = None) -> dict:
    """Fill defaults, make relative file paths absolute and validate."""
    if not isinstance(raw, dict):
        raise ConfigurationError("manifest must be a JSON object")
    unknown = set(raw) - set(DEFAULTS) - {"dataset"}
    if unknown:
        raise ConfigurationError(f"unknown manifest keys {sorted(unknown)}")
    m = copy.deepcopy(DEFAULTS)
    m.update(copy.deepcopy(raw))
    if "dataset" not in m:
        raise ConfigurationError("manifest needs a 'dataset' entry")
    if base_dir is not None:
        for ds in _dataset_entries(m):
            for key in ("images", "labels", "path"):
                if key in ds and not Path(ds[key]).is_absolute():
                    ds[key] = str((base_dir / ds[key]).resolve())
    validate(m)
    return m


def _dataset_entries(m: dict) -> list:
    out = [m["dataset"]]
    if m.get("ood"):
        out += [m["ood"]["search_dataset"]] if m["ood"].get("search_dataset") else []
        out += list(m["ood"].get("search_datasets", []))
    return out


def validate(m: dict) -> None:
    for alg in m["algorithms"]:
        if alg not in KNOWN_ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {alg!r}")
    for a in list(m["attacks"]) + list(m["sensitivity"].get("attacks", [])):
        if a not in KNOWN_ATTACKS:
            raise ConfigurationError(f"unknown attack {a!r}")
    for a in m["defense_attacks"]:
        if a not in KNOWN_ATTACKS + ("clean",):
            raise ConfigurationError(f"unknown attack {a!r}")
    for d in m["defenses"]:
        if d not in KNOWN_DEFENSES:
            raise ConfigurationError(f"unknown defense {d!r}")
    for p in list(m["budgets"]) + list(m["defense_budgets"]):
        if not 0 < float(p) <= 1:
            raise ConfigurationError(f"budget {p} outside (0, 1]")
    if m["ood"] is not None:
        extra = set(m["ood"]) - {"search_dataset", "search_datasets"}
        if extra or not (m["ood"].get("search_dataset") or m["ood"].get("search_datasets")):
            raise ConfigurationError("'ood' takes 'search_dataset' and/or 'search_datasets'")
    seeds = trial_seeds(m)
    if len(set(seeds)) != len(seeds):
        raise ConfigurationError("trial seeds must be distinct")
    if int(m["baseline"].get("samples", 10)) < 2:
        raise ConfigurationError("baseline needs at least 2 samples")
    SplitSpec(tuple(m["split"]["fractions"]), int(m["split"].get("seed", 0)))
    # config objects must be constructible
    from ..attacks import GcConfig
    from ..defense import RelabelConfig, SanitizationConfig
    from ..search import DiffSearchConfig, HybridSearchConfig, RetrainConfig, TfSearchConfig

    builders = {"diff": DiffSearchConfig, "training_free": TfSearchConfig, "hybrid": HybridSearchConfig}
    try:
        for alg, cfg in m["algorithms"].items():
            builders[alg].from_dict(cfg)
        RetrainConfig.from_dict(m["retrain"])
        GcConfig.from_dict(m["gc"])
        SanitizationConfig.from_dict(m["sanitize"])
        RelabelConfig.from_dict(m["relabel"])
    except TypeError as exc:
        raise ConfigurationError(f"bad config entry: {exc}") from None


def trial_seeds(m: dict) -> list:
    seeds = m["seeds"]
    base = int(m["seed_base"])
    if isinstance(seeds, int):
        if seeds < 1:
            raise ConfigurationError("need at least one seed")
        return [base + i for i in range(seeds)]
    return [int(s) for s in seeds]


def canonical_bytes(m: dict) -> bytes:
    hashed = {k: v for k, v in m.items() if k not in UNHASHED_KEYS}
    return json.dumps(hashed, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode()


def manifest_hash(m: dict) -> str:
    return hashlib.sha256(canonical_bytes(m)).hexdigest()


def load_dataset(spec: dict):
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind in ("blobs", "moons", "rings"):
        name = spec.pop("name", None)
        try:
            ds = generate_synthetic(kind, **spec)
        except TypeError as exc:
            raise ConfigurationError(f"bad synthetic dataset spec: {exc}") from None
        return ds if name is None else replace(ds, name=name)
    if kind == "idx":
        return load_idx(spec["images"], spec["labels"], spec.get("downsample_to"), spec.get("name"))
    if kind == "csv":
        return read_csv(spec["path"], spec.get("num_classes"), spec.get("name"))
    raise ConfigurationError(f"unknown dataset kind {kind!r}")
