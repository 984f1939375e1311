"""Side-by-side dumps of clean and poisoned rows for visual inspection."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..data import Dataset


def dump_samples(clean: Dataset, poisoned: Dataset, path, limit: int = 8) -> Path:
    """Rows: index, version (clean/poisoned), label, max |delta|, f0..f{d-1}."""
    rows = np.flatnonzero(poisoned.poison_mask)[:limit]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "version", "label", "linf_delta"] + [f"f{i}" for i in range(clean.d)])
        for r in rows:
            delta = float(np.abs(poisoned.features[r] - clean.features[r]).max())
            w.writerow([int(r), "clean", int(clean.labels[r]), "0.0"] + [repr(float(v)) for v in clean.features[r]])
            w.writerow([int(r), "poisoned", int(poisoned.labels[r]), repr(delta)]
                       + [repr(float(v)) for v in poisoned.features[r]])
    return path
