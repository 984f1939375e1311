"""From-scratch retraining of discrete architectures and the random-sampling baseline."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..data import AugmentationSpec, Dataset, fit_normalizer
from ..errors import ConfigurationError, MethodologyError
from ..nn import accuracy, train_model
from ..space import Genotype, NetworkInstance, random_genotype


@dataclass(frozen=True)
class RetrainConfig:
    cells: int = 4
    width: int = 16
    epochs: int = 30
    lr: float = 0.05
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: float = 3e-4
    augmentation: AugmentationSpec | None = None

    @classmethod
    def from_dict(cls, d: dict | None) -> "RetrainConfig":
        d = dict(d or {})
        if d.get("augmentation") is not None:
            d["augmentation"] = AugmentationSpec.from_dict(d["augmentation"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augmentation"] = None if self.augmentation is None else asdict(self.augmentation)
        return d


def require_clean(dataset: Dataset, role: str) -> None:
    if np.any(dataset.poison_mask):
        raise MethodologyError(
            f"{role} split '{dataset.name}' contains {int(dataset.poison_mask.sum())} poisoned rows; "
            "final training and evaluation must use clean data")


def train_instance(genotype: Genotype, train: Dataset, epochs: int, seed: int,
                   config: RetrainConfig | None = None):
    """Fresh network trained on ``train``; returns (net, normalizer, loss history)."""
    config = config or RetrainConfig()
    net = NetworkInstance(genotype, config.cells, config.width, train.d, train.num_classes, seed=seed)
    norm = fit_normalizer(train.features)
    history = train_model(net, train, norm, epochs, lr=config.lr, batch_size=config.batch_size,
                          momentum=config.momentum, weight_decay=config.weight_decay, seed=seed,
                          augmentation=config.augmentation)
    return net, norm, history


def retrain_from_scratch(genotype: Genotype, final_train: Dataset, test: Dataset, epochs: int | None = None,
                         seed: int = 0, config: RetrainConfig | None = None, return_model: bool = False):
    """Test accuracy (fraction) of ``genotype`` trained from scratch on clean data."""
    require_clean(final_train, "final-train")
    require_clean(test, "test")
    config = config or RetrainConfig()
    epochs = config.epochs if epochs is None else epochs
    net, norm, _ = train_instance(genotype, final_train, epochs, seed, config)
    acc = accuracy(net, test, norm)
    return (acc, net, norm) if return_model else acc


@dataclass
class BaselineResult:
    mean: float
    std: float
    records: list  # (genotype, accuracy)


def random_baseline(final_train: Dataset, test: Dataset, r_samples: int = 10, epochs: int | None = None,
                    seeds=None, config: RetrainConfig | None = None) -> BaselineResult:
    """Mean/std test accuracy of ``r_samples`` random genotypes trained from scratch.

    ``seeds`` (one per sample, default 0..R-1) drive both sampling and training.
    """
    if r_samples < 2:
        raise ConfigurationError("random baseline needs at least 2 samples")
    seeds = list(range(r_samples)) if seeds is None else list(seeds)[:r_samples]
    if len(seeds) != r_samples:
        raise ConfigurationError("need one seed per baseline sample")
    records = []
    for s in seeds:
        g = random_genotype(np.random.default_rng(s))
        records.append((g, retrain_from_scratch(g, final_train, test, epochs, seed=s, config=config)))
    accs = np.array([a for _, a in records])
    return BaselineResult(float(accs.mean()), float(accs.std(ddof=1)), records)
