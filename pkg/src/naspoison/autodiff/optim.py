"""First-order optimizers operating in place on named tensors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Tensor


class PoisonedGradientError(FloatingPointError):
    """A gradient contained NaN; the step was aborted before touching parameters."""


def _check_finite(grads: dict) -> None:
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise PoisonedGradientError(f"non-finite gradient for {bad}")


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> None:
    """One bias-corrected Adam update of ``params`` (name -> Tensor or ndarray)."""
    if state.lr <= 0:
        raise ValueError("learning rate must be positive")
    _check_finite(grads)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        data = p.data if isinstance(p, Tensor) else p
        if g.shape != data.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != {data.shape}")
        if state.weight_decay:
            g = g + state.weight_decay * data
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(data)
            state.v[name] = np.zeros_like(data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    def __init__(self, params: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay)

    def step(self, grads: dict) -> None:
        adam_step(self.state, self.params, grads)


def sgd_step(params: dict, grads: dict, lr: float, momentum: float = 0.0, velocity: dict | None = None,
             weight_decay: float = 0.0) -> None:
    """SGD with classical momentum: ``v = mu*v + g; p -= lr*v``."""
    _check_finite(grads)
    for name, p in params.items():
        g = grads[name]
        data = p.data if isinstance(p, Tensor) else p
        if weight_decay:
            g = g + weight_decay * data
        if momentum and velocity is not None:
            v = velocity.get(name)
            if v is None:
                v = velocity[name] = np.zeros_like(data)
            v *= momentum
            v += g
            g = v
        data -= lr * g


class SGD:
    def __init__(self, params: dict, lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: dict = {}

    def step(self, grads: dict, lr: float | None = None) -> None:
        sgd_step(self.params, grads, self.lr if lr is None else lr, self.momentum, self.velocity,
                 self.weight_decay)


def cosine_lr(base: float, step: int, total: int, floor: float = 0.0) -> float:
    if total <= 0:
        return base
    return floor + 0.5 * (base - floor) * (1.0 + math.cos(math.pi * min(step, total) / total))
