"""Condition number of the empirical neural tangent kernel at initialization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import WEIGHTS, Tape, Tensor

JITTER = 1e-8
KAPPA_LIMIT = 1e8


def jacobi_eigenvalues(a: np.ndarray, tol: float = 1e-14, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending."""
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"square matrix required, got {a.shape}")
    a = 0.5 * (a + a.T)
    scale = max(np.abs(a).max(), np.finfo(float).tiny)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[p, q] = a[q, p] = 0.0
    return np.sort(np.diag(a))


@dataclass(frozen=True)
class NtkResult:
    kappa: float
    stable: bool
    jittered: bool
    eigenvalues: np.ndarray


def per_sample_gradients(net, x: np.ndarray, group: str | None = WEIGHTS) -> np.ndarray:
    """Rows are gradients of each sample's summed logits w.r.t. the flattened parameters."""
    leaves = net.params.tensors(group)
    with Tape() as tape:
        out = ad.tsum(net.forward(Tensor(x)), axis=1)
    grads = ad.per_sample_backward(tape, out, leaves)
    return np.concatenate([g.reshape(len(x), -1) for g in grads], axis=1)


def gram_from_gradients(g: np.ndarray) -> np.ndarray:
    k = g @ g.T
    return 0.5 * (k + k.T)


def condition_number_from_gram(k: np.ndarray) -> NtkResult:
    """kappa = lmax / lmin. A numerically singular Gram gets one diagonal jitter retry;
    it is flagged unstable if lmin stays <= 0 or kappa exceeds ``KAPPA_LIMIT``."""
    m = k.shape[0]
    eig = jacobi_eigenvalues(k)
    lmax = eig[-1]
    if lmax <= 0 or not np.all(np.isfinite(eig)):
        return NtkResult(float("inf"), False, False, eig)
    if eig[0] > m * np.finfo(float).eps * lmax:
        return NtkResult(float(lmax / eig[0]), True, False, eig)
    delta = JITTER * float(np.mean(np.diag(k)))
    eig = jacobi_eigenvalues(k + delta * np.eye(m))
    if eig[0] <= 0:
        return NtkResult(float("inf"), False, True, eig)
    kappa = float(eig[-1] / eig[0])
    return NtkResult(kappa, kappa <= KAPPA_LIMIT, True, eig)


def ntk_condition_number(net, probe: np.ndarray) -> NtkResult:
    """Uses inputs only; ``probe`` must already be in the net's input units."""
    if len(probe) < 2:
        raise ValueError("NTK probe batch needs at least 2 samples")
    return condition_number_from_gram(gram_from_gradients(per_sample_gradients(net, probe)))
