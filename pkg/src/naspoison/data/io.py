"""CSV import/export of datasets with a JSON sidecar describing poisoning provenance."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .dataset import Dataset


def read_csv(path, num_classes: int | None = None, name: str | None = None) -> Dataset:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[-1] != "label":
            raise FormatError(f"{path}: header must end with 'label'")
        expected = [f"f{i}" for i in range(len(header) - 1)]
        if header[:-1] != expected:
            raise FormatError(f"{path}: feature columns must be f0..f{len(header) - 2}")
        rows = list(reader)
    if not rows:
        raise FormatError(f"{path}: no data rows")
    x = np.array([[float(v) for v in r[:-1]] for r in rows], dtype=np.float64)
    y = np.array([int(r[-1]) for r in rows], dtype=np.int64)
    mask = None
    sidecar = manifest_path(path)
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        mask = np.zeros(len(y), dtype=bool)
        mask[np.asarray(meta.get("mask_indices", []), dtype=np.int64)] = True
        num_classes = num_classes or meta.get("num_classes")
    c = num_classes or int(y.max()) + 1
    return Dataset(x, y, c, poison_mask=mask, name=name or path.stem)


def manifest_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_suffix(".json")


def write_csv(dataset: Dataset, path, meta: dict | None = None) -> Path:
    """Write ``f0..f{d-1},label`` rows plus ``<stem>.json`` with mask indices and ``meta``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{i}" for i in range(dataset.d)] + ["label"])
        for row, label in zip(dataset.features, dataset.labels):
            w.writerow([repr(float(v)) for v in row] + [int(label)])
    sidecar = {
        "name": dataset.name,
        "n": dataset.n,
        "num_classes": dataset.num_classes,
        "mask_indices": np.flatnonzero(dataset.poison_mask).tolist(),
    }
    sidecar.update(meta or {})
    manifest_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return path
