from __future__ import annotations

from typing import Callable

import numpy as np


def finite_diff_grad(f: Callable[[], float], params: dict, h: float = 1e-3) -> dict:
    """Central-difference gradient of scalar ``f()`` w.r.t. every entry of ``params``.

    ``params`` maps names to Tensors (or arrays) that ``f`` reads; each entry
    is perturbed in place and restored.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    out = {}
    for name, p in params.items():
        data = p.data if hasattr(p, "data") and not isinstance(p, np.ndarray) else p
        g = np.zeros_like(data)
        flat = data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(f())
            flat[i] = orig - h
            down = float(f())
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        out[name] = g
    return out


def max_relative_error(a: dict, b: dict, floor: float = 1e-8) -> float:
    worst = 0.0
    for k in a:
        num = np.abs(a[k] - b[k])
        den = np.maximum(np.maximum(np.abs(a[k]), np.abs(b[k])), floor)
        if num.size:
            worst = max(worst, float((num / den).max()))
    return worst
