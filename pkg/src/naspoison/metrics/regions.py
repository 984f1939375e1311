"""Expressivity proxy: distinct ReLU activation patterns over a probe set."""

from __future__ import annotations

import numpy as np

from ..autodiff import ActivationRecorder, Tensor


def count_patterns(signs: np.ndarray) -> int:
    if signs.size == 0:
        return 1
    return int(np.unique(np.packbits(signs, axis=1), axis=0).shape[0])


def linear_regions(net, probe: np.ndarray) -> int:
    with ActivationRecorder() as rec:
        net.forward(Tensor(probe))
    return count_patterns(rec.sign_patterns())
