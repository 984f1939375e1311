"""Small models and the shared SGD training loop.

A model is anything with ``params`` (a ParamStore), ``forward(x: Tensor) ->
logits`` over *normalized* features, and ``num_classes``. Forward passes must
be row-wise (no batch statistics) so per-sample gradients are well defined.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import WEIGHTS, ParamStore, Tape, Tensor
from .data import AugmentationSpec, Dataset, Normalizer, augment
from .errors import TrialFailure


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float = 1.0) -> np.ndarray:
    return rng.normal(0.0, gain / np.sqrt(fan_in), size=(fan_in, fan_out))


class MLP:
    """Fully connected net; ``dims = [d, h1, ..., C]``."""

    def __init__(self, dims: list, seed: int = 0, activation: str = "relu"):
        self.dims = list(dims)
        self.num_classes = dims[-1]
        self.activation = activation
        self.params = ParamStore()
        rng = np.random.default_rng(seed)
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            gain = np.sqrt(2.0) if activation == "relu" and i < len(dims) - 2 else 1.0
            self.params.add(f"W{i}", init_linear(rng, a, b, gain), WEIGHTS)
            self.params.add(f"b{i}", np.zeros((1, b)), WEIGHTS)

    def _act(self, h: Tensor) -> Tensor:
        return ad.relu(h) if self.activation == "relu" else ad.tanh(h)

    def features(self, x: Tensor) -> Tensor:
        """Penultimate-layer representation."""
        h = x
        for i in range(len(self.dims) - 2):
            h = self._act(ad.add(ad.matmul(h, self.params[f"W{i}"]), self.params[f"b{i}"]))
        return h

    def forward(self, x: Tensor) -> Tensor:
        k = len(self.dims) - 2
        return ad.add(ad.matmul(self.features(x), self.params[f"W{k}"]), self.params[f"b{k}"])


def predict_logits(model, features: np.ndarray, normalizer: Normalizer | None = None,
                   batch_size: int = 512) -> np.ndarray:
    x = features if normalizer is None else normalizer.transform(features)
    out = [model.forward(Tensor(x[i : i + batch_size])).data for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, model.num_classes))


def accuracy(model, dataset: Dataset, normalizer: Normalizer | None = None) -> float:
    logits = predict_logits(model, dataset.features, normalizer)
    return float((logits.argmax(axis=1) == dataset.labels).mean())


def per_sample_loss(model, dataset: Dataset, normalizer: Normalizer | None = None) -> np.ndarray:
    logits = predict_logits(model, dataset.features, normalizer)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -logp[np.arange(dataset.n), dataset.labels]


def batch_loss_and_grads(model, x: np.ndarray, y: np.ndarray, group: str | None = WEIGHTS):
    with Tape() as tape:
        loss = ad.cross_entropy(model.forward(Tensor(x)), y)
    grads = ad.backward(tape, loss, dict(model.params.named_tensors(group)))
    return loss.item(), grads


def train_model(model, dataset: Dataset, normalizer: Normalizer, epochs: int, lr: float = 0.05,
                batch_size: int = 64, momentum: float = 0.9, weight_decay: float = 3e-4,
                seed: int = 0, augmentation: AugmentationSpec | None = None,
                cosine: bool = True, grad_clip: float | None = 5.0) -> list:
    """Minibatch SGD on the weight group; returns mean loss per epoch."""
    rng = np.random.default_rng(seed)
    params = model.params.subset(WEIGHTS)
    opt = ad.SGD(params, lr, momentum=momentum, weight_decay=weight_decay)
    steps_per_epoch = max(1, int(np.ceil(dataset.n / batch_size)))
    total = epochs * steps_per_epoch
    history = []
    step = 0
    for _ in range(epochs):
        order = rng.permutation(dataset.n)
        losses = []
        for start in range(0, dataset.n, batch_size):
            idx = order[start : start + batch_size]
            xb = dataset.features[idx]
            if augmentation is not None:
                xb = augment(xb, augmentation, rng, dataset.grid_shape)
            loss, grads = batch_loss_and_grads(model, normalizer.transform(xb), dataset.labels[idx])
            if not np.isfinite(loss):
                raise TrialFailure(f"training loss diverged at step {step}")
            if grad_clip is not None:
                clip_grads(grads, grad_clip)
            cur = ad.cosine_lr(lr, step, total) if cosine else lr
            try:
                opt.step(grads, lr=cur)
            except ad.PoisonedGradientError as exc:
                raise TrialFailure(str(exc)) from exc
            losses.append(loss)
            step += 1
        history.append(float(np.mean(losses)))
    return history


def clip_grads(grads: dict, max_norm: float) -> float:
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if total > max_norm:
        factor = max_norm / (total + 1e-12)
        for k in grads:
            grads[k] = grads[k] * factor
    return total
