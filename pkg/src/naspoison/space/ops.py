"""Candidate operations on vector features.

Desk analogues of the usual convolutional cell operations: linear layers stand
in for separable convs, low-rank and gated linears for dilated convs, and
pooling over groups of 4 adjacent features for 3x3 pooling. ``stride=2``
(edges leaving the input states of a reduction cell) halves the width.
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np

from .. import autodiff as ad
from ..autodiff import WEIGHTS, ParamStore
from ..errors import ConfigurationError
from ..nn import init_linear

POOL_GROUP = 4


class OpKind(IntEnum):
    NONE = 0
    SKIP_CONNECT = 1
    LINEAR_RELU = 2
    LINEAR_TANH = 3
    LOW_RANK_LINEAR = 4
    GROUP_AVG_POOL = 5
    GROUP_MAX_POOL = 6
    GATED_LINEAR = 7

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text: str) -> "OpKind":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown operation {text!r}") from None


OP_NAMES = [k.label for k in OpKind]
NUM_OPS = len(OpKind)
NON_NONE = [k for k in OpKind if k is not OpKind.NONE]


def low_rank(w_out: int) -> int:
    return max(1, w_out // 4)


def pool_groups(w_in: int, stride: int) -> np.ndarray:
    """Index table for group pooling: stride 1 broadcasts each block of 4 back over
    itself; stride 2 uses overlapping windows of 4 stepped by 2, wrapping around."""
    if w_in % POOL_GROUP:
        raise ConfigurationError(f"width {w_in} not divisible by pooling group size {POOL_GROUP}")
    if stride == 1:
        return np.array([[POOL_GROUP * (j // POOL_GROUP) + t for t in range(POOL_GROUP)] for j in range(w_in)])
    return np.array([[(2 * j + t) % w_in for t in range(POOL_GROUP)] for j in range(w_in // 2)])


def skip_groups(w_in: int) -> np.ndarray:
    return np.arange(w_in).reshape(w_in // 2, 2)


def op_param_count(kind: OpKind, w_in: int, w_out: int) -> int:
    if kind in (OpKind.LINEAR_RELU, OpKind.LINEAR_TANH):
        return w_in * w_out
    if kind is OpKind.LOW_RANK_LINEAR:
        r = low_rank(w_out)
        return w_in * r + r * w_out
    if kind is OpKind.GATED_LINEAR:
        return 2 * w_in * w_out
    return 0


def build_op(kind: OpKind, store: ParamStore, prefix: str, w_in: int, stride: int,
             rng: np.random.Generator):
    """Register the op's weights in ``store`` and return ``x -> Tensor`` (None for ``none``)."""
    w_out = w_in // stride
    if kind is OpKind.NONE:
        return None
    if kind is OpKind.SKIP_CONNECT:
        if stride == 1:
            return lambda x: x
        groups = skip_groups(w_in)
        return lambda x: ad.group_avg(x, groups)
    if kind is OpKind.LINEAR_RELU:
        W = store.add(f"{prefix}.W", init_linear(rng, w_in, w_out), WEIGHTS)
        return lambda x: ad.matmul(ad.relu(x), W)
    if kind is OpKind.LINEAR_TANH:
        W = store.add(f"{prefix}.W", init_linear(rng, w_in, w_out), WEIGHTS)
        return lambda x: ad.matmul(ad.tanh(x), W)
    if kind is OpKind.LOW_RANK_LINEAR:
        r = low_rank(w_out)
        U = store.add(f"{prefix}.U", init_linear(rng, w_in, r), WEIGHTS)
        V = store.add(f"{prefix}.V", init_linear(rng, r, w_out), WEIGHTS)
        return lambda x: ad.matmul(ad.matmul(ad.relu(x), U), V)
    if kind is OpKind.GROUP_AVG_POOL:
        groups = pool_groups(w_in, stride)
        return lambda x: ad.group_avg(x, groups)
    if kind is OpKind.GROUP_MAX_POOL:
        groups = pool_groups(w_in, stride)
        return lambda x: ad.group_max(x, groups)
    if kind is OpKind.GATED_LINEAR:
        W = store.add(f"{prefix}.W", init_linear(rng, w_in, w_out), WEIGHTS)
        G = store.add(f"{prefix}.G", init_linear(rng, w_in, w_out), WEIGHTS)
        return lambda x: ad.mul(ad.matmul(x, W), ad.sigmoid(ad.matmul(x, G)))
    raise ValueError(kind)
