"""Stacked-cell networks: the continuous supernet and discrete instances built from genotypes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import ARCH, WEIGHTS, ParamStore, Tensor
from ..errors import ConfigurationError
from ..nn import init_linear
from .genotype import CELL_KINDS, EDGES, NODES, NUM_EDGES, Genotype, discretize, edge_index
from .ops import NUM_OPS, POOL_GROUP, OpKind, build_op, op_param_count


@dataclass(frozen=True)
class CellPlan:
    reduction: bool
    w_pp: int  # width of c_{k-2}
    w_p: int  # width of c_{k-1}
    w_in: int
    w_out: int

    @property
    def kind(self) -> str:
        return "reduce" if self.reduction else "normal"


def reduction_positions(cells: int) -> set:
    return {cells // 3, (2 * cells) // 3}


def plan_cells(cells: int, width: int) -> list:
    if cells < 2:
        raise ConfigurationError("need at least 2 cells")
    red = reduction_positions(cells)
    plans = []
    w_pp = w_p = w = width
    for k in range(cells):
        reduction = k in red
        w_out = w // 2 if reduction else w
        if w % 2 or w_out % POOL_GROUP or w % POOL_GROUP:
            raise ConfigurationError(
                f"width {width} not divisible by pooling groups through {cells} cells (cell {k}: {w}->{w_out})")
        plans.append(CellPlan(reduction, w_pp, w_p, w, w_out))
        w_pp, w_p, w = w_p, w_out, w_out
    return plans


class _StackedNet:
    """Shared stem/preprocess/projection/head plumbing."""

    def __init__(self, cells: int, width: int, in_dim: int, num_classes: int, seed: int,
                 zero_head: bool = False):
        self.cells = cells
        self.width = width
        self.in_dim = in_dim
        self.num_classes = num_classes
        self.plans = plan_cells(cells, width)
        self.params = ParamStore()
        self.rng = np.random.default_rng(seed)
        self.params.add("stem", init_linear(self.rng, in_dim, width), WEIGHTS)
        self._edge_fns: list = []
        for k, plan in enumerate(self.plans):
            self.params.add(f"cell{k}.pre0", init_linear(self.rng, plan.w_pp, plan.w_in), WEIGHTS)
            self.params.add(f"cell{k}.pre1", init_linear(self.rng, plan.w_p, plan.w_in), WEIGHTS)
            self._edge_fns.append(self._build_edges(k, plan))
            self.params.add(f"cell{k}.proj", init_linear(self.rng, NODES * plan.w_out, plan.w_out,
                                                         gain=1.0 / np.sqrt(2.0)), WEIGHTS)
        w_final = self.plans[-1].w_out
        head = np.zeros((w_final, num_classes)) if zero_head else init_linear(self.rng, w_final, num_classes)
        self.params.add("head.W", head, WEIGHTS)
        self.params.add("head.b", np.zeros((1, num_classes)), WEIGHTS)

    def _build_edges(self, k: int, plan: CellPlan):
        raise NotImplementedError

    def forward(self, x: Tensor) -> Tensor:
        s0 = s1 = ad.matmul(x, self.params["stem"])
        for k, plan in enumerate(self.plans):
            states = [ad.matmul(s0, self.params[f"cell{k}.pre0"]),
                      ad.matmul(s1, self.params[f"cell{k}.pre1"])]
            for i in range(NODES):
                states.append(self._node(k, plan, i, states))
            out = ad.matmul(ad.concat(states[2:], axis=1), self.params[f"cell{k}.proj"])
            s0, s1 = s1, out
        return ad.add(ad.matmul(s1, self.params["head.W"]), self.params["head.b"])

    def _node(self, k: int, plan: CellPlan, i: int, states: list) -> Tensor:
        raise NotImplementedError


class NetworkInstance(_StackedNet):
    """Concrete network for a genotype; node output = sum of its two edge outputs."""

    def __init__(self, genotype: Genotype, cells: int, width: int, in_dim: int, num_classes: int,
                 seed: int = 0, zero_head: bool = False):
        self.genotype = genotype
        super().__init__(cells, width, in_dim, num_classes, seed, zero_head)

    def _build_edges(self, k: int, plan: CellPlan):
        fns = {}
        for i, node in enumerate(self.genotype.cell(plan.kind)):
            for s, op in node:
                stride = 2 if plan.reduction and s < 2 else 1
                w_in = plan.w_in if s < 2 else plan.w_out
                fns[(i, s)] = build_op(op, self.params, f"cell{k}.n{i}.s{s}.{op.label}", w_in, stride,
                                       self.rng)
        return fns

    def _node(self, k: int, plan: CellPlan, i: int, states: list) -> Tensor:
        (s_a, _), (s_b, _) = self.genotype.cell(plan.kind)[i]
        fns = self._edge_fns[k]
        return ad.add(fns[(i, s_a)](states[s_a]), fns[(i, s_b)](states[s_b]))


def instance_param_count(genotype: Genotype, cells: int, width: int, in_dim: int, num_classes: int) -> int:
    """Closed-form parameter count of :class:`NetworkInstance`."""
    total = in_dim * width
    for plan in plan_cells(cells, width):
        total += plan.w_pp * plan.w_in + plan.w_p * plan.w_in
        for node in genotype.cell(plan.kind):
            for s, op in node:
                stride = 2 if plan.reduction and s < 2 else 1
                w_in = plan.w_in if s < 2 else plan.w_out
                total += op_param_count(op, w_in, w_in // stride)
        total += NODES * plan.w_out * plan.w_out
    w_final = plan_cells(cells, width)[-1].w_out
    return total + w_final * num_classes + num_classes


def full_masks() -> dict:
    return {kind: np.ones((NUM_EDGES, NUM_OPS), dtype=bool) for kind in CELL_KINDS}


class Supernet(_StackedNet):
    """Continuous relaxation: every edge mixes its active candidates by softmax(alpha).

    ``alpha_normal`` / ``alpha_reduce`` (shape edges x ops) are shared by all
    cells of the same kind and live in the ``arch`` parameter group.
    """

    def __init__(self, cells: int, width: int, in_dim: int, num_classes: int, seed: int = 0,
                 masks: dict | None = None, alpha_scale: float = 1e-3):
        self.masks = {k: np.array(v, dtype=bool) for k, v in (masks or full_masks()).items()}
        for kind, m in self.masks.items():
            if m.shape != (NUM_EDGES, NUM_OPS) or not m.any(axis=1).all():
                raise ConfigurationError(f"{kind} mask must keep at least one op per edge")
        super().__init__(cells, width, in_dim, num_classes, seed)
        for kind in CELL_KINDS:
            self.params.add(f"alpha_{kind}", alpha_scale * self.rng.normal(size=(NUM_EDGES, NUM_OPS)), ARCH)
        self._bias = {k: np.where(m, 0.0, -np.inf) for k, m in self.masks.items()}
        self._weights_cache: dict = {}

    def _build_edges(self, k: int, plan: CellPlan):
        fns = {}
        mask = self.masks[plan.kind]
        for e, (i, s) in enumerate(EDGES):
            stride = 2 if plan.reduction and s < 2 else 1
            w_in = plan.w_in if s < 2 else plan.w_out
            ops = [OpKind(o) for o in range(1, NUM_OPS) if mask[e, o]]
            fns[e] = [(int(o), build_op(o, self.params, f"cell{k}.e{e}.{o.label}", w_in, stride, self.rng))
                      for o in ops]
        return fns

    def alpha(self, kind: str) -> Tensor:
        return self.params[f"alpha_{kind}"]

    def edge_weights(self, kind: str) -> Tensor:
        """Masked softmax over ops on every edge (a tape-tracked Tensor)."""
        return ad.softmax(ad.add(self.alpha(kind), self._bias[kind]), axis=1)

    def weights_numpy(self, kind: str) -> np.ndarray:
        return self.edge_weights(kind).data

    def forward(self, x: Tensor) -> Tensor:
        self._weights_cache = {kind: self.edge_weights(kind) for kind in CELL_KINDS}
        try:
            return super().forward(x)
        finally:
            self._weights_cache = {}

    def mixed_op(self, k: int, e: int, x: Tensor, weights: Tensor) -> Tensor | None:
        """Softmax-weighted sum of the active branch outputs on edge ``e`` of cell ``k``.

        ``none`` contributes a zero branch, so only its weight participates.
        """
        branches = self._edge_fns[k][e]
        if not branches:
            return None
        w_e = ad.take(weights, e, axis=0)
        outs = [fn(x) for _, fn in branches]
        idx = [o for o, _ in branches]
        if len(outs) == 1:
            return ad.mul(ad.reshape(ad.take(w_e, idx), (1, 1)), outs[0])
        batch, width = outs[0].shape
        stacked = ad.reshape(ad.stack(outs, axis=0), (len(outs), batch * width))
        mixed = ad.matmul(ad.reshape(ad.take(w_e, idx), (1, len(idx))), stacked)
        return ad.reshape(mixed, (batch, width))

    def _node(self, k: int, plan: CellPlan, i: int, states: list) -> Tensor:
        weights = self._weights_cache[plan.kind]
        acc = None
        for s in range(i + 2):
            out = self.mixed_op(k, edge_index(i, s), states[s], weights)
            if out is None:
                continue
            acc = out if acc is None else ad.add(acc, out)
        if acc is None:
            batch = states[0].shape[0]
            acc = Tensor(np.zeros((batch, plan.w_out)))
        return acc

    def genotype(self) -> Genotype:
        return discretize(self.alpha("normal").data, self.alpha("reduce").data, self.masks)
