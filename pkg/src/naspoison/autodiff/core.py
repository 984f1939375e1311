"""Tape-based reverse-mode autodiff over float64 numpy arrays.

Operations record themselves on the innermost active :class:`Tape`. Outside a
tape nothing is recorded, which doubles as a cheap inference mode::

    with Tape() as tape:
        loss = cross_entropy(model.forward(x), y)
    grads = backward(tape, loss, model.params)
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

_state = threading.local()


class DimensionError(ValueError):
    """Input shapes are invalid for the requested operation."""


class ContractError(RuntimeError):
    """An autodiff call violated its preconditions."""


def _tapes() -> list:
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def _recorders() -> list:
    if not hasattr(_state, "recorders"):
        _state.recorders = []
    return _state.recorders


class Tensor:
    """Dense float64 array, optionally tracked by a tape."""

    __slots__ = ("data", "requires_grad", "_node", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._node = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def tracked(self) -> bool:
        return self.requires_grad or self._node is not None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if np.isscalar(other):
            return scale(self, 1.0 / float(other))
        raise TypeError("only division by a scalar is supported")

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    op: str
    out: Tensor
    parents: tuple
    vjp: Callable
    # optional per-sample vjp for leaf parents: (g, parent_index) -> (B, *shape)
    ps_vjp: Callable | None = None
    index: int = -1


@dataclass
class Tape:
    """Ordered record of primitive operations; parents always precede children."""

    nodes: list = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _tapes().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tapes().pop()

    def __len__(self) -> int:
        return len(self.nodes)


def _record(op: str, out_data: np.ndarray, parents: tuple, vjp: Callable, ps_vjp=None) -> Tensor:
    out = Tensor(out_data)
    tapes = _tapes()
    if tapes and any(p.tracked for p in parents):
        tape = tapes[-1]
        node = Node(op, out, parents, vjp, ps_vjp, len(tape.nodes))
        tape.nodes.append(node)
        out._node = node
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    def ps_vjp(g, i):
        shape = (a, b)[i].shape
        return _per_sample_unbroadcast(g, shape)

    return _record("add", a.data + b.data, (a, b), vjp, ps_vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def vjp(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _record("sub", a.data - b.data, (a, b), vjp)


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data

    def vjp(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _record("mul", ad * bd, (a, b), vjp)


elementwise_mul = mul


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _record("scale", a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        ga = g @ bd.T if a.tracked else None
        gb = ad.T @ g if b.tracked else None
        return ga, gb

    def ps_vjp(g, i):
        if i == 1:
            return ad[:, :, None] * g[:, None, :]
        raise ContractError("matmul: per-sample gradients only for the right operand")

    return _record("matmul", ad @ bd, (a, b), vjp, ps_vjp)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out = _record("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))
    for rec in _recorders():
        rec.pre.append(x.data)
        rec.post.append(out)
    return out


def tanh(x) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)
    return _record("tanh", t, (x,), lambda g: (g * (1.0 - t * t),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _record("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    e = np.exp(x.data)
    return _record("exp", e, (x,), lambda g: (g * e,))


def log(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _record("log", np.log(xd), (x,), lambda g: (g / xd,))


def square(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _record("square", xd * xd, (x,), lambda g: (2.0 * g * xd,))


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _record("softmax", s, (x,), vjp)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def vjp(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return _record("log_softmax", out, (x,), vjp)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record("sum", x.data.sum(axis=axis, keepdims=keepdims), (x,), vjp)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    count = x.data.size if axis is None else shape[axis]

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _record("mean", x.data.mean(axis=axis, keepdims=keepdims), (x,), vjp)


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = tuple(as_tensor(x) for x in xs)
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[x.shape for x in xs]}") from None
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record("concat", out, xs, vjp)


def stack(xs: Sequence, axis: int = 0) -> Tensor:
    xs = tuple(as_tensor(x) for x in xs)
    try:
        out = np.stack([x.data for x in xs], axis=axis)
    except ValueError:
        raise DimensionError(f"stack: incompatible shapes {[x.shape for x in xs]}") from None

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))

    return _record("stack", out, xs, vjp)


def reshape(x, shape: tuple) -> Tensor:
    x = as_tensor(x)
    orig = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {orig} to {shape}") from None
    return _record("reshape", out, (x,), lambda g: (g.reshape(orig),))


def take(x, indices, axis: int = 0) -> Tensor:
    """Gather along ``axis``; repeated indices accumulate in the backward pass."""
    x = as_tensor(x)
    idx = np.asarray(indices)
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape)
        moved = np.moveaxis(out, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0) if idx.ndim else g)
        return (out,)

    return _record("take", np.take(x.data, idx, axis=axis), (x,), vjp)


def pick(x, labels) -> Tensor:
    """Row-wise selection ``x[i, labels[i]]`` of a 2-D tensor."""
    x = as_tensor(x)
    labels = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or labels.shape != (x.shape[0],):
        raise DimensionError(f"pick: shapes {x.shape} and labels {labels.shape}")
    rows = np.arange(x.shape[0])
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape)
        out[rows, labels] = g
        return (out,)

    return _record("pick", x.data[rows, labels], (x,), vjp)


def _check_groups(op: str, x: Tensor, groups: np.ndarray) -> None:
    if x.ndim != 2 or groups.ndim != 2 or groups.size == 0 or groups.max() >= x.shape[1]:
        raise DimensionError(f"{op}: input {x.shape} incompatible with groups {groups.shape}")


def group_avg(x, groups) -> Tensor:
    """``out[:, j] = mean(x[:, groups[j]])`` for an integer (w_out, g) index array."""
    x = as_tensor(x)
    groups = np.asarray(groups, dtype=np.int64)
    _check_groups("group_avg", x, groups)
    w_in = x.shape[1]
    avg = np.zeros((w_in, groups.shape[0]))
    np.add.at(avg, (groups, np.arange(groups.shape[0])[:, None]), 1.0 / groups.shape[1])
    return _record("group_avg", x.data @ avg, (x,), lambda g: (g @ avg.T,))


def group_max(x, groups) -> Tensor:
    """``out[:, j] = max(x[:, groups[j]])``; ties route the gradient to the first maximiser."""
    x = as_tensor(x)
    groups = np.asarray(groups, dtype=np.int64)
    _check_groups("group_max", x, groups)
    gathered = x.data[:, groups]
    arg = gathered.argmax(axis=2)
    winners = groups[np.arange(groups.shape[0])[None, :], arg]
    rows = np.arange(x.shape[0])[:, None]
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, (rows, winners), g)
        return (out,)

    return _record("group_max", gathered.max(axis=2), (x,), vjp)


def cross_entropy(logits, labels) -> Tensor:
    """Mean softmax cross-entropy of integer labels."""
    return scale(mean(pick(log_softmax(logits), labels)), -1.0)


def _per_sample_unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.ndim == len(shape) + 1:
        return g
    if g.ndim != len(shape) or shape[0] != 1:
        raise ContractError(f"per-sample gradient undefined for shape {shape}")
    return g.reshape((g.shape[0],) + shape)


# ------------------------------------------------------------------ backward


def backward(
    tape: Tape,
    loss: Tensor,
    wrt=None,
    seed: np.ndarray | None = None,
):
    """Reverse sweep from ``loss``.

    ``wrt`` may be a ParamStore-like mapping (returns ``{name: grad}``) or a
    sequence of tensors (returns a list). Unreachable entries get zeros. A
    non-scalar ``loss`` needs an explicit ``seed`` cotangent.
    """
    if seed is None:
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        seed = np.ones(loss.shape)
    keep = None
    if wrt is not None:
        items = _wrt_tensors(wrt)
        keep = {id(t) for t in items if t._node is not None}
    grads = _sweep(tape, loss, np.asarray(seed, dtype=np.float64), keep=keep)
    return _collect(grads, wrt)


def _wrt_tensors(wrt) -> list:
    if hasattr(wrt, "named_tensors"):
        return [t for _, t in wrt.named_tensors()]
    if isinstance(wrt, Mapping):
        return list(wrt.values())
    return list(wrt)


def _sweep(tape: Tape, loss: Tensor, seed: np.ndarray, per_sample: set | None = None,
           keep: set | None = None):
    grads = {id(loss): seed}
    ps_grads: dict = {}
    kept: dict = {}
    for node in reversed(tape.nodes):
        key = id(node.out)
        g = grads.pop(key, None)
        if g is None:
            continue
        if keep and key in keep:
            kept[key] = g
        pgrads = node.vjp(g)
        for i, (parent, pg) in enumerate(zip(node.parents, pgrads)):
            if pg is None or not parent.tracked:
                continue
            if per_sample is not None and id(parent) in per_sample:
                ps = node.ps_vjp(g, i) if node.ps_vjp else None
                if ps is None:
                    raise ContractError(f"{node.op}: no per-sample gradient rule")
                prev = ps_grads.get(id(parent))
                ps_grads[id(parent)] = ps if prev is None else prev + ps
                continue
            pg = _unbroadcast(pg, parent.shape)
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg
    if per_sample is not None:
        return ps_grads
    grads.update(kept)
    return grads


def _collect(grads: dict, wrt):
    if wrt is None:
        return grads
    if isinstance(wrt, Mapping) or hasattr(wrt, "named_tensors"):
        items = wrt.named_tensors() if hasattr(wrt, "named_tensors") else wrt.items()
        return {name: _grad_or_zero(grads, t) for name, t in items}
    return [_grad_or_zero(grads, t) for t in wrt]


def _grad_or_zero(grads: dict, t: Tensor) -> np.ndarray:
    g = grads.get(id(t))
    return np.zeros(t.shape) if g is None else g


def per_sample_backward(tape: Tape, out: Tensor, leaves: Iterable[Tensor], seed=None) -> list:
    """Per-sample gradients of row-summed ``out`` w.r.t. ``leaves``.

    Valid only when rows of the forward pass never interact (no batch
    statistics); each returned array has shape ``(B, *leaf.shape)``.
    """
    leaves = list(leaves)
    if seed is None:
        seed = np.ones(out.shape)
    ps = _sweep(tape, out, np.asarray(seed, dtype=np.float64), per_sample={id(t) for t in leaves})
    batch = out.shape[0]
    return [ps.get(id(t), np.zeros((batch,) + t.shape)) for t in leaves]


class ActivationRecorder:
    """Collects ReLU pre-activations and post-activation tensors during a forward pass."""

    def __init__(self):
        self.pre: list = []
        self.post: list = []

    def __enter__(self) -> "ActivationRecorder":
        _recorders().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _recorders().remove(self)

    def sign_patterns(self) -> np.ndarray:
        """Boolean (B, units) matrix of positive pre-activations."""
        if not self.pre:
            return np.zeros((0, 0), dtype=bool)
        return np.concatenate([p > 0 for p in self.pre], axis=1)
