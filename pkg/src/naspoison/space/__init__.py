from .genotype import (
    CELL_KINDS,
    EDGES,
    NODES,
    NUM_EDGES,
    Genotype,
    all_skip_genotype,
    discretize,
    discretize_cell,
    discretize_weights,
    edge_index,
    enumerate_cells,
    from_dot,
    masked_softmax,
    random_genotype,
    space_size,
    to_dot,
)
from .network import (
    NetworkInstance,
    Supernet,
    full_masks,
    instance_param_count,
    plan_cells,
    reduction_positions,
)
from .ops import NON_NONE, NUM_OPS, OP_NAMES, POOL_GROUP, OpKind, op_param_count

__all__ = [
    "CELL_KINDS", "EDGES", "NODES", "NUM_EDGES", "Genotype", "all_skip_genotype", "discretize",
    "discretize_cell", "discretize_weights", "edge_index", "enumerate_cells", "from_dot",
    "masked_softmax", "random_genotype", "space_size", "to_dot", "NetworkInstance", "Supernet",
    "full_masks", "instance_param_count", "plan_cells", "reduction_positions", "NON_NONE", "NUM_OPS",
    "OP_NAMES", "POOL_GROUP", "OpKind", "op_param_count",
]
