"""Gradient-based saliency scores computed on one labeled batch at initialization."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import WEIGHTS, ActivationRecorder, Tape, Tensor

LOSS_METRICS = ("grad_norm", "snip", "grasp", "fisher")


def _loss_grads(net, x: np.ndarray, y: np.ndarray, names: list) -> dict:
    with Tape() as tape:
        loss = ad.cross_entropy(net.forward(Tensor(x)), y)
    return ad.backward(tape, loss, {n: net.params[n] for n in names})


def hessian_vector_product(net, x: np.ndarray, y: np.ndarray, v: dict, h: float = 1e-3) -> dict:
    """H v by central differences of gradients along the unit direction of ``v``."""
    names = list(v)
    norm = float(np.sqrt(sum(float((v[n] ** 2).sum()) for n in names)))
    if norm == 0.0:
        return {n: np.zeros_like(v[n]) for n in names}
    saved = {n: net.params[n].data.copy() for n in names}
    try:
        for n in names:
            net.params[n].data[...] = saved[n] + h * v[n] / norm
        up = _loss_grads(net, x, y, names)
        for n in names:
            net.params[n].data[...] = saved[n] - h * v[n] / norm
        down = _loss_grads(net, x, y, names)
    finally:
        for n in names:
            net.params[n].data[...] = saved[n]
    return {n: norm * (up[n] - down[n]) / (2.0 * h) for n in names}


def loss_based_scores(net, x: np.ndarray, y: np.ndarray, h: float = 1e-3) -> dict:
    """grad_norm, snip, grasp and fisher over the weight group; NaN marks an unstable score."""
    names = net.params.names(WEIGHTS)
    with ActivationRecorder() as rec, Tape() as tape:
        loss = ad.cross_entropy(net.forward(Tensor(x)), y)
    wrt = [net.params[n] for n in names] + list(rec.post)
    grads = ad.backward(tape, loss, wrt)
    g = dict(zip(names, grads[: len(names)]))
    act_grads = grads[len(names):]
    theta = {n: net.params[n].data for n in names}

    grad_norm = float(np.sqrt(sum(float((g[n] ** 2).sum()) for n in names)))
    snip = float(sum(np.abs(theta[n] * g[n]).sum() for n in names))
    hg = hessian_vector_product(net, x, y, g, h)
    grasp = float(sum((-hg[n] * theta[n]).sum() for n in names))
    fisher = float(sum(((a.data * ga) ** 2).sum() for a, ga in zip(rec.post, act_grads)))
    return {"grad_norm": grad_norm, "snip": snip, "grasp": grasp, "fisher": fisher}
