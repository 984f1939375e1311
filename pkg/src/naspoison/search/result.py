"""Search outputs and their on-disk forms."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..space import Genotype


@dataclass
class SearchResult:
    genotype: Genotype
    algorithm: str
    wall_time: float = 0.0
    diagnostics: dict = field(default_factory=dict)
    # rows of (stage, epoch, train_loss, val_loss) for supernet-trained searches
    curves: list = field(default_factory=list)
    # in-memory artifacts (trained supernet, normalizer); never serialized
    artifacts: dict = field(default_factory=dict, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "genotype": self.genotype.to_text(),
            "wall_time": self.wall_time,
            "diagnostics": self.diagnostics,
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load_json(cls, path) -> "SearchResult":
        d = json.loads(Path(path).read_text())
        return cls(Genotype.from_text(d["genotype"]), d["algorithm"], d.get("wall_time", 0.0),
                   d.get("diagnostics", {}))

    def save_curves(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["stage", "epoch", "train_loss", "val_loss"])
            for stage, epoch, tr, va in self.curves:
                w.writerow([stage, epoch, repr(float(tr)), repr(float(va))])
