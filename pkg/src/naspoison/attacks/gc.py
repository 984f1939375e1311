"""Gradient canceling: feature perturbations whose gradients cancel the clean gradient
toward a bounded, loss-increasing parameter target."""

from __future__ import annotations

import csv
from pathlib import Path
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import autodiff as ad
from ..autodiff import ARCH, WEIGHTS, Tape, Tensor
from ..data import PIXEL_MAX, Dataset, Normalizer
from ..errors import ConfigurationError
from .budget import DEFAULT_EPSILON, bounded_add, choose_rows, mark

TARGET_GROUPS = {"model_weights": WEIGHTS, "architectural_params": ARCH}


@dataclass(frozen=True)
class GcConfig:
    steps: int = 250
    lr: float = 1.0  # Adam step in pixel units
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    epsilon: float = DEFAULT_EPSILON
    target: str = "model_weights"
    patience: int = 50
    fd_step: float = 1e-3
    gradpc_bound: float = 0.5
    gradpc_steps: int = 10
    craft_batch: int = 256

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigurationError("GC needs at least one step")
        if self.target not in TARGET_GROUPS:
            raise ConfigurationError(f"unknown GC target {self.target!r}; use one of {sorted(TARGET_GROUPS)}")

    @classmethod
    def from_dict(cls, d: dict | None) -> "GcConfig":
        d = dict(d or {})
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def _group_names(net, group: str) -> list:
    names = net.params.names(group)
    if not names:
        raise ConfigurationError(f"model has no parameters in group {group!r}")
    return names


def _param_grads(net, x: np.ndarray, y: np.ndarray, names: list) -> dict:
    if len(x) == 0:
        return {n: np.zeros(net.params[n].shape) for n in names}
    with Tape() as tape:
        loss = ad.cross_entropy(net.forward(Tensor(x)), y)
    return ad.backward(tape, loss, {n: net.params[n] for n in names})


def _loss(net, x: np.ndarray, y: np.ndarray) -> float:
    return ad.cross_entropy(net.forward(Tensor(x)), y).item()


def _input_grad(net, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    xt = Tensor(x, requires_grad=True)
    with Tape() as tape:
        loss = ad.cross_entropy(net.forward(xt), y)
    return ad.backward(tape, loss, [xt])[0]


class _Installed:
    """Temporarily overwrite named parameters, restoring them on exit."""

    def __init__(self, net, values: dict):
        self.net, self.values = net, values

    def __enter__(self):
        self.saved = {n: self.net.params[n].data.copy() for n in self.values}
        for n, v in self.values.items():
            self.net.params[n].data[...] = v
        return self

    def __exit__(self, *exc):
        for n, v in self.saved.items():
            self.net.params[n].data[...] = v


def parameter_scale(value: np.ndarray) -> float:
    """RMS magnitude of a tensor; 1 for an all-zero tensor so it can still move."""
    rms = float(np.sqrt(np.mean(np.square(value)))) if value.size else 0.0
    return rms if rms > 0 else 1.0


@dataclass
class GradPcResult:
    theta: dict
    loss_before: float
    loss_after: float

    @property
    def increased(self) -> bool:
        return self.loss_after > self.loss_before


def gradpc_targets(net, x: np.ndarray, y: np.ndarray, bound: float = 0.5, group: str = WEIGHTS,
                   steps: int = 10) -> GradPcResult:
    """Bounded sign-gradient ascent on cross-entropy over one parameter group.

    ``bound`` is in normalized parameter units: each tensor may move by at most
    ``bound`` times its own RMS magnitude per entry. ``x`` is in the net's
    input units. The net is left unchanged.
    """
    names = _group_names(net, group)
    theta0 = {n: net.params[n].data.copy() for n in names}
    before = _loss(net, x, y)
    if bound == 0:
        return GradPcResult(theta0, before, before)
    radius = {n: bound * parameter_scale(v) for n, v in theta0.items()}
    theta = {n: v.copy() for n, v in theta0.items()}
    with _Installed(net, theta0):
        for _ in range(steps):
            g = _param_grads(net, x, y, names)
            for n in names:
                r = radius[n]
                theta[n] = np.clip(theta[n] + 2.5 * r / steps * np.sign(g[n]), theta0[n] - r, theta0[n] + r)
                net.params[n].data[...] = theta[n]
        after = _loss(net, x, y)
    res = GradPcResult(theta, before, after)
    if not res.increased:
        warnings.warn(f"parameter target did not raise the loss ({before:.6g} -> {after:.6g})",
                      RuntimeWarning, stacklevel=2)
    return res


@dataclass
class GcResult:
    dataset: Dataset
    rows: np.ndarray
    trajectory: list = field(default_factory=list)  # (step, canceling loss)
    early_stopped: bool = False
    best_step: int = 0

    @property
    def initial_loss(self) -> float:
        return self.trajectory[0][1]

    @property
    def final_loss(self) -> float:
        return min(v for _, v in self.trajectory)

    def write_trajectory(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "loss"])
            for s, v in self.trajectory:
                w.writerow([s, repr(float(v))])


def _flat_dot(a: dict, b: dict) -> float:
    return float(sum(float((a[n] * b[n]).sum()) for n in a))


def canceling_loss(g_clean: dict, g_adv: dict, p: float) -> tuple:
    u = {n: (1.0 - p) * g_clean[n] + p * g_adv[n] for n in g_clean}
    return 0.5 * _flat_dot(u, u), u


def canceling_grad(net, names: list, u: dict, x: np.ndarray, y: np.ndarray, p: float, h: float) -> np.ndarray:
    """d(canceling loss)/dx for the poison rows via a central difference along u in parameter space."""
    norm_u = np.sqrt(_flat_dot(u, u))
    if norm_u == 0.0:
        return np.zeros_like(x)
    step = h / norm_u
    base = {n: net.params[n].data.copy() for n in names}
    with _Installed(net, {n: base[n] + step * u[n] for n in names}):
        up = _input_grad(net, x, y)
    with _Installed(net, {n: base[n] - step * u[n] for n in names}):
        down = _input_grad(net, x, y)
    return p * (up - down) / (2.0 * step)


def gradient_canceling(net, theta_target: dict, dataset: Dataset, p: float, normalizer: Normalizer,
                       rng: np.random.Generator, config: GcConfig | None = None,
                       rows: np.ndarray | None = None) -> GcResult:
    """Optimize per-row perturbations of a random ``floor(n p)`` subset with Adam under
    the l-infinity bound and [0, 255] box. Gradients are taken at ``theta_target``."""
    config = config or GcConfig()
    names = list(theta_target)
    eps = config.epsilon
    rows = choose_rows(dataset.n, p, rng) if rows is None else np.asarray(rows)
    clean_rows = np.setdiff1d(np.arange(dataset.n), rows)
    x0 = dataset.features[rows]
    y = dataset.labels[rows]
    lo = np.maximum(-eps, -x0)
    hi = np.minimum(eps, PIXEL_MAX - x0)
    std = normalizer.std

    with _Installed(net, theta_target):
        g_clean = _param_grads(net, normalizer.transform(dataset.features[clean_rows]),
                               dataset.labels[clean_rows], names)
        delta = np.zeros_like(x0)
        m = np.zeros_like(x0)
        v = np.zeros_like(x0)
        b1, b2 = config.betas
        traj = []
        best = (np.inf, 0, delta.copy())
        stale = 0
        early = False
        for step in range(config.steps + 1):
            xn = normalizer.transform(x0 + delta)
            g_adv = _param_grads(net, xn, y, names)
            loss, u = canceling_loss(g_clean, g_adv, p)
            traj.append((step, loss))
            if loss < best[0]:
                best = (loss, step, delta.copy())
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    early = True
                    warnings.warn(f"canceling loss stalled for {config.patience} steps; stopping at {step}",
                                  RuntimeWarning, stacklevel=2)
                    break
            if step == config.steps or rows.size == 0:
                break
            g = canceling_grad(net, names, u, xn, y, p, config.fd_step) / std
            t = step + 1
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            mhat = m / (1 - b1**t)
            vhat = v / (1 - b2**t)
            delta = np.clip(delta - config.lr * mhat / (np.sqrt(vhat) + config.adam_eps), lo, hi)

    x = dataset.features.copy()
    x[rows] = bounded_add(x0, best[2], eps)
    out = dataset.with_features(x, mark(dataset, rows))
    return GcResult(out, rows, traj, early, best[1])


def nas_gc(target_kind: str, artifacts: dict, dataset: Dataset, p: float, rng: np.random.Generator,
           config: GcConfig | None = None) -> GcResult:
    """GC against a search artifact: a converged supernet's alphas or a clean-trained model's weights.

    ``artifacts`` needs ``normalizer`` plus ``supernet`` or ``model`` for the chosen target.
    """
    config = config or GcConfig()
    if target_kind not in TARGET_GROUPS:
        raise ConfigurationError(f"unknown GC target {target_kind!r}")
    key = "supernet" if target_kind == "architectural_params" else "model"
    net = artifacts.get(key)
    norm = artifacts.get("normalizer")
    if net is None or norm is None:
        raise ConfigurationError(f"GC on {target_kind} needs a '{key}' artifact and its normalizer")
    group = TARGET_GROUPS[target_kind]
    rows = choose_rows(dataset.n, p, rng)
    craft = rng.choice(dataset.n, size=min(config.craft_batch, dataset.n), replace=False)
    target = gradpc_targets(net, norm.transform(dataset.features[craft]), dataset.labels[craft],
                            config.gradpc_bound, group, config.gradpc_steps)
    return gradient_canceling(net, target.theta, dataset, p, norm, rng, config, rows=rows)
