"""Progressive differentiable search: bi-level supernet training with op dropping between stages."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import ARCH, WEIGHTS
from ..data import AugmentationSpec, Dataset, augment, fit_normalizer
from ..errors import ConfigurationError, TrialFailure
from ..nn import batch_loss_and_grads, clip_grads
from ..space import CELL_KINDS, NUM_OPS, Supernet, full_masks
from .result import SearchResult


@dataclass(frozen=True)
class DiffSearchConfig:
    stages: tuple = (4, 6)  # cell count per stage
    drops: tuple = (2,)  # ops dropped per edge after each stage but the last
    epochs: tuple = (10, 10)
    warmup_epochs: int = 0  # weight-only epochs at the start of each stage
    width: int = 16
    weight_lr: float = 0.05
    weight_momentum: float = 0.9
    weight_decay: float = 3e-4
    alpha_lr: float = 3e-3
    alpha_betas: tuple = (0.5, 0.999)
    alpha_weight_decay: float = 1e-3
    batch_size: int = 64
    grad_clip: float = 5.0
    augmentation: AugmentationSpec | None = None
    seed: int = 0

    def __post_init__(self):
        if len(self.stages) < 1:
            raise ConfigurationError("need at least one search stage")
        if len(self.epochs) != len(self.stages):
            raise ConfigurationError("one epoch count per stage required")
        if len(self.drops) != len(self.stages) - 1:
            raise ConfigurationError("one drop count per stage transition required")
        remaining = NUM_OPS - 1
        for d in self.drops:
            if not 0 <= d < remaining:
                raise ConfigurationError(f"cannot drop {d} of {remaining} remaining ops per edge")
            remaining -= d

    @classmethod
    def from_dict(cls, d: dict | None) -> "DiffSearchConfig":
        d = dict(d or {})
        for k in ("stages", "drops", "epochs", "alpha_betas"):
            if k in d:
                d[k] = tuple(d[k])
        if d.get("augmentation") is not None:
            d["augmentation"] = AugmentationSpec.from_dict(d["augmentation"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augmentation"] = None if self.augmentation is None else asdict(self.augmentation)
        return d


def drop_weakest(masks: dict, weights: dict, count: int) -> dict:
    """Per edge, deactivate the ``count`` lowest-weight active non-none ops (ties: higher index first)."""
    out = {k: m.copy() for k, m in masks.items()}
    if count == 0:
        return out
    for kind in CELL_KINDS:
        w = weights[kind]
        for e in range(w.shape[0]):
            active = [o for o in range(1, NUM_OPS) if out[kind][e, o]]
            ranked = sorted(active, key=lambda o: (w[e, o], -o))
            for o in ranked[:count]:
                out[kind][e, o] = False
    return out


def _weights_np(net: Supernet) -> dict:
    return {kind: net.weights_numpy(kind) for kind in CELL_KINDS}


def diff_search(train: Dataset, val: Dataset, config: DiffSearchConfig | None = None) -> SearchResult:
    config = config or DiffSearchConfig()
    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    # features are normalized with statistics of the (possibly poisoned) search data
    norm = fit_normalizer(np.concatenate([train.features, val.features]))
    masks = full_masks()
    curves, stage_diag = [], []
    net = None
    for stage, (cells, epochs) in enumerate(zip(config.stages, config.epochs)):
        net = Supernet(cells, config.width, train.d, train.num_classes,
                       seed=config.seed * 7919 + stage, masks=masks)
        w_params = net.params.subset(WEIGHTS)
        a_params = net.params.subset(ARCH)
        w_opt = ad.SGD(w_params, config.weight_lr, momentum=config.weight_momentum,
                       weight_decay=config.weight_decay)
        a_opt = None
        if config.alpha_lr > 0:
            a_opt = ad.Adam(a_params, config.alpha_lr, betas=config.alpha_betas,
                            weight_decay=config.alpha_weight_decay)
        steps = max(1, int(np.ceil(train.n / config.batch_size)))
        total = epochs * steps
        step = 0
        for epoch in range(epochs):
            order_t = rng.permutation(train.n)
            order_v = rng.permutation(val.n)
            tr_losses, va_losses = [], []
            for b in range(steps):
                it = order_t[b * config.batch_size : (b + 1) * config.batch_size]
                xb = train.features[it]
                if config.augmentation is not None:
                    xb = augment(xb, config.augmentation, rng, train.grid_shape)
                loss, g = batch_loss_and_grads(net, norm.transform(xb), train.labels[it], WEIGHTS)
                _check(loss, stage, epoch)
                clip_grads(g, config.grad_clip)
                lr = ad.cosine_lr(config.weight_lr, step, total)
                try:
                    w_opt.step(g, lr=lr)
                except ad.PoisonedGradientError as exc:
                    raise TrialFailure(str(exc)) from exc
                tr_losses.append(loss)
                step += 1
                if a_opt is None or epoch < config.warmup_epochs:
                    continue
                iv = np.take(order_v, np.arange(b * config.batch_size, (b + 1) * config.batch_size), mode="wrap")
                vloss, ga = batch_loss_and_grads(net, norm.transform(val.features[iv]), val.labels[iv], ARCH)
                _check(vloss, stage, epoch)
                try:
                    a_opt.step(ga)
                except ad.PoisonedGradientError as exc:
                    raise TrialFailure(str(exc)) from exc
                va_losses.append(vloss)
            curves.append((stage, epoch, float(np.mean(tr_losses)),
                           float(np.mean(va_losses)) if va_losses else float("nan")))
        weights = _weights_np(net)
        stage_diag.append({"cells": cells, "active_ops": int(sum(m[:, 1:].sum() for m in masks.values())),
                           "genotype": net.genotype().to_text()})
        if stage < len(config.drops):
            masks = drop_weakest(masks, weights, config.drops[stage])
    genotype = net.genotype()
    result = SearchResult(genotype, "diff", time.perf_counter() - t0, {"stages": stage_diag}, curves)
    result.artifacts = {"supernet": net, "normalizer": norm}
    return result


def _check(loss: float, stage: int, epoch: int) -> None:
    if not np.isfinite(loss):
        raise TrialFailure(f"supernet loss diverged (stage {stage}, epoch {epoch})")



