"""Discrete cell architectures, their text/DOT formats, discretization and sampling."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from itertools import product

import numpy as np

from .ops import NON_NONE, NUM_OPS, OpKind

NODES = 4
CELL_KINDS = ("normal", "reduce")


def edge_list(nodes: int = NODES) -> list:
    """``[(node, input_state)]`` in node-major order; states 0,1 are c_{k-2}, c_{k-1}."""
    return [(i, j) for i in range(nodes) for j in range(i + 2)]


EDGES = edge_list()
NUM_EDGES = len(EDGES)
_EDGE_INDEX = {e: k for k, e in enumerate(EDGES)}


def edge_index(node: int, state: int) -> int:
    return _EDGE_INDEX[(node, state)]


def state_name(j: int) -> str:
    return ("c_k-2", "c_k-1")[j] if j < 2 else f"n{j - 2}"


def parse_state(text: str) -> int:
    text = text.strip()
    if text == "c_k-2":
        return 0
    if text == "c_k-1":
        return 1
    m = re.fullmatch(r"n(\d+)", text)
    if not m:
        raise ValueError(f"unknown input state {text!r}")
    return int(m.group(1)) + 2


Cell = tuple  # tuple of NODES nodes, each a tuple of two (state, OpKind) pairs


def _canonical_cell(cell) -> tuple:
    return tuple(tuple(sorted(((int(s), OpKind(o)) for s, o in node))) for node in cell)


@dataclass(frozen=True)
class Genotype:
    normal: tuple
    reduce: tuple

    def __post_init__(self):
        object.__setattr__(self, "normal", _canonical_cell(self.normal))
        object.__setattr__(self, "reduce", _canonical_cell(self.reduce))
        for kind in CELL_KINDS:
            validate_cell(getattr(self, kind), kind)

    def cell(self, kind: str) -> tuple:
        return getattr(self, kind)

    def pairs(self) -> list:
        return [pair for kind in CELL_KINDS for node in self.cell(kind) for pair in node]

    def to_text(self) -> str:
        return "\n".join(f"{kind}: " + " | ".join(
            "".join(f"({state_name(s)}, {o.label})" for s, o in node) for node in self.cell(kind))
            for kind in CELL_KINDS)

    def __str__(self) -> str:
        return self.to_text()

    @classmethod
    def from_text(cls, text: str) -> "Genotype":
        cells = {}
        for line in text.strip().splitlines():
            if not line.strip():
                continue
            kind, _, body = line.partition(":")
            kind = kind.strip()
            if kind not in CELL_KINDS:
                raise ValueError(f"unknown cell kind {kind!r}")
            nodes = []
            for chunk in body.split("|"):
                pairs = re.findall(r"\(\s*([^,()]+?)\s*,\s*([a-z_]+)\s*\)", chunk)
                nodes.append(tuple((parse_state(s), OpKind.parse(o)) for s, o in pairs))
            cells[kind] = tuple(nodes)
        if set(cells) != set(CELL_KINDS):
            raise ValueError("genotype text needs one 'normal:' and one 'reduce:' line")
        return cls(cells["normal"], cells["reduce"])


def validate_cell(cell, kind: str = "cell", nodes: int = NODES) -> None:
    if len(cell) != nodes:
        raise ValueError(f"{kind}: expected {nodes} internal nodes, got {len(cell)}")
    for i, node in enumerate(cell):
        if len(node) != 2:
            raise ValueError(f"{kind} node {i}: expected 2 inputs, got {len(node)}")
        states = [s for s, _ in node]
        if len(set(states)) != 2:
            raise ValueError(f"{kind} node {i}: inputs must be distinct")
        for s, o in node:
            if not 0 <= s < i + 2:
                raise ValueError(f"{kind} node {i}: input state {s} not available")
            if o is OpKind.NONE:
                raise ValueError(f"{kind} node {i}: 'none' in a discrete genotype")


# ------------------------------------------------------------ discretization


def masked_softmax(alpha: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    a = np.asarray(alpha, dtype=np.float64)
    if mask is not None:
        a = np.where(mask, a, -np.inf)
    z = a - a.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def discretize_cell(weights: np.ndarray, nodes: int = NODES) -> tuple:
    """Per node keep the 2 incoming edges with the largest best-non-none weight, and on
    each the argmax non-none op. Ties break by (edge index, op index)."""
    cell = []
    offset = 0
    for i in range(nodes):
        n_in = i + 2
        block = weights[offset : offset + n_in, 1:]
        best_op = block.argmax(axis=1) + 1  # argmax returns the first maximiser
        score = block.max(axis=1)
        order = sorted(range(n_in), key=lambda j: (-score[j], j))[:2]
        cell.append(tuple((j, OpKind(int(best_op[j]))) for j in order))
        offset += n_in
    return tuple(cell)


def discretize(alpha_normal: np.ndarray, alpha_reduce: np.ndarray, masks: dict | None = None) -> Genotype:
    masks = masks or {}
    return Genotype(
        discretize_cell(masked_softmax(alpha_normal, masks.get("normal"))),
        discretize_cell(masked_softmax(alpha_reduce, masks.get("reduce"))),
    )


def discretize_weights(weights_normal: np.ndarray, weights_reduce: np.ndarray) -> Genotype:
    return Genotype(discretize_cell(weights_normal), discretize_cell(weights_reduce))


# ------------------------------------------------------------------ sampling


def random_cell(rng: np.random.Generator, nodes: int = NODES) -> tuple:
    cell = []
    for i in range(nodes):
        states = rng.choice(i + 2, size=2, replace=False)
        ops = rng.integers(1, NUM_OPS, size=2)
        cell.append(tuple((int(s), OpKind(int(o))) for s, o in zip(states, ops)))
    return tuple(cell)


def random_genotype(rng: np.random.Generator) -> Genotype:
    return Genotype(random_cell(rng), random_cell(rng))


def space_size(nodes: int = NODES, ops: int = len(NON_NONE)) -> int:
    """Closed-form count of genotypes (both cells)."""
    per_cell = math.prod(math.comb(i + 2, 2) * ops**2 for i in range(nodes))
    return per_cell**2


def enumerate_cells(nodes: int, ops: int = len(NON_NONE)):
    """Brute-force enumeration of distinct single-cell genotypes."""
    seen = set()
    per_node = []
    for i in range(nodes):
        choices = []
        for s0, s1 in product(range(i + 2), repeat=2):
            for o0, o1 in product(range(1, ops + 1), repeat=2):
                if s0 == s1:
                    continue
                choices.append(tuple(sorted(((s0, o0), (s1, o1)))))
        per_node.append(sorted(set(choices)))
    for cell in product(*per_node):
        if cell not in seen:
            seen.add(cell)
            yield cell


# ----------------------------------------------------------------------- DOT


def _dot_node(kind: str, j: int) -> str:
    return {0: "c_k-2", 1: "c_k-1"}.get(j, str(j - 2))


def to_dot(genotype: Genotype, title: str = "genotype") -> str:
    lines = [f'digraph "{title}" {{', "  rankdir=LR;"]
    for kind in CELL_KINDS:
        lines.append(f'  subgraph "cluster_{kind}" {{')
        lines.append(f'    label="{kind}";')
        lines.append(f'    "{kind}:c_k-2" [shape=box, style=filled, fillcolor=darkseagreen2];')
        lines.append(f'    "{kind}:c_k-1" [shape=box, style=filled, fillcolor=darkseagreen2];')
        for i in range(NODES):
            lines.append(f'    "{kind}:{i}" [shape=box, style=filled, fillcolor=lightblue];')
        lines.append(f'    "{kind}:c_k" [shape=box, style=filled, fillcolor=palegoldenrod];')
        for i, node in enumerate(genotype.cell(kind)):
            for s, o in node:
                lines.append(f'    "{kind}:{_dot_node(kind, s)}" -> "{kind}:{i}" [label="{o.label}"];')
        for i in range(NODES):
            lines.append(f'    "{kind}:{i}" -> "{kind}:c_k";')
        lines.append("  }")
    lines.append("}")
    return "\n".join(lines) + "\n"


_DOT_EDGE = re.compile(r'"(normal|reduce):([^"]+)"\s*->\s*"(?:normal|reduce):(\d+)"\s*\[label="([a-z_]+)"\]')


def from_dot(text: str) -> Genotype:
    cells = {k: [[] for _ in range(NODES)] for k in CELL_KINDS}
    for kind, src, dst, op in _DOT_EDGE.findall(text):
        s = {"c_k-2": 0, "c_k-1": 1}.get(src)
        if s is None:
            s = int(src) + 2
        cells[kind][int(dst)].append((s, OpKind.parse(op)))
    return Genotype(tuple(map(tuple, cells["normal"])), tuple(map(tuple, cells["reduce"])))


def all_skip_genotype() -> Genotype:
    cell = tuple(((0, OpKind.SKIP_CONNECT), (1, OpKind.SKIP_CONNECT)) for _ in range(NODES))
    return Genotype(cell, cell)
