import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from naspoison import autodiff as ad
from naspoison.autodiff import Tape, Tensor
from naspoison.errors import ConfigurationError
from naspoison.space import (
    EDGES,
    NUM_EDGES,
    NUM_OPS,
    Genotype,
    NetworkInstance,
    OpKind,
    Supernet,
    all_skip_genotype,
    discretize,
    discretize_weights,
    enumerate_cells,
    from_dot,
    instance_param_count,
    masked_softmax,
    random_genotype,
    reduction_positions,
    space_size,
    to_dot,
)


def oracle_discretize_cell(weights):
    """Score every (edge, op) pair, then rank edges per node by their best non-none score."""
    pairs = {}
    for e, (node, state) in enumerate(EDGES):
        for o in range(1, NUM_OPS):
            pairs[(e, o)] = weights[e, o]
    cell = []
    for node in range(4):
        edges = [e for e, (n, _) in enumerate(EDGES) if n == node]
        best = {}
        for e in edges:
            ranked = sorted(range(1, NUM_OPS), key=lambda o: (-pairs[(e, o)], o))
            best[e] = (pairs[(e, ranked[0])], ranked[0])
        chosen = sorted(edges, key=lambda e: (-best[e][0], e))[:2]
        cell.append(tuple(sorted((EDGES[e][1], OpKind(best[e][1])) for e in chosen)))
    return tuple(cell)


def test_genotype_text_round_trip_and_validation(rng):
    for _ in range(20):
        g = random_genotype(rng)
        assert Genotype.from_text(g.to_text()) == g
        assert len(g.pairs()) == 16
    bad = ((((0, OpKind.NONE), (1, OpKind.SKIP_CONNECT)),) + all_skip_genotype().normal[1:])
    with pytest.raises(ValueError, match="none"):
        Genotype(bad, all_skip_genotype().reduce)
    with pytest.raises(ValueError):
        Genotype.from_text("normal: (c_k-2, skip_connect)(n3, skip_connect)\nreduce: ")


def test_text_format_example():
    g = all_skip_genotype()
    assert g.to_text().splitlines()[0].startswith("normal: (c_k-2, skip_connect)(c_k-1, skip_connect) | ")


def test_dot_round_trip(rng):
    for _ in range(10):
        g = random_genotype(rng)
        assert from_dot(to_dot(g)) == g
        assert Genotype.from_text(from_dot(to_dot(g)).to_text()) == g


def test_random_genotype_seeded():
    assert random_genotype(np.random.default_rng(5)) == random_genotype(np.random.default_rng(5))


def test_random_genotype_op_frequencies_uniform():
    rng = np.random.default_rng(0)
    counts = np.zeros(NUM_OPS)
    for _ in range(8000):
        for _, o in random_genotype(rng).pairs():
            counts[o] += 1
    n = counts.sum()
    assert counts[0] == 0 and n == 8000 * 16
    p = 1 / 7
    sigma = math.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts[1:] - n * p) < 3 * sigma)


def test_space_size_formula_and_enumeration():
    assert space_size() == (180 * 7**8) ** 2
    assert f"{space_size():.3e}" == "1.077e+18"
    assert len(list(enumerate_cells(2))) ** 2 == space_size(nodes=2)
    assert len(list(enumerate_cells(2, ops=2))) == space_size(nodes=2, ops=2) ** 0.5


def test_discretize_matches_oracle_small():
    rng = np.random.default_rng(1)
    for _ in range(200):
        a_n, a_r = rng.normal(size=(2, NUM_EDGES, NUM_OPS)) * rng.uniform(0.1, 5)
        g = discretize(a_n, a_r)
        assert g.normal == oracle_discretize_cell(masked_softmax(a_n))
        assert g.reduce == oracle_discretize_cell(masked_softmax(a_r))


def test_discretize_handbuilt_and_ties():
    w = np.full((NUM_EDGES, NUM_OPS), 0.01)
    e = EDGES.index((0, 1))
    w[e, OpKind.LINEAR_RELU] = 0.9
    g = discretize_weights(w, w)
    assert (1, OpKind.LINEAR_RELU) in g.normal[0]
    flat = discretize(np.zeros((NUM_EDGES, NUM_OPS)), np.zeros((NUM_EDGES, NUM_OPS)))
    assert flat.normal == tuple(((0, OpKind.SKIP_CONNECT), (1, OpKind.SKIP_CONNECT)) for _ in range(4))
    heavy_none = np.full((NUM_EDGES, NUM_OPS), 0.001)
    heavy_none[:, 0] = 0.99
    assert all(o is not OpKind.NONE for _, o in discretize_weights(heavy_none, heavy_none).pairs())


def test_reduction_positions_and_width_check():
    assert reduction_positions(3) == {1, 2}
    assert reduction_positions(6) == {2, 4}
    with pytest.raises(ConfigurationError):
        NetworkInstance(all_skip_genotype(), 3, 8, 4, 2)


def test_all_skip_zero_head_uniform():
    net = NetworkInstance(all_skip_genotype(), 3, 16, 5, 3, zero_head=True)
    p = ad.softmax(net.forward(Tensor(np.random.default_rng(0).normal(size=(4, 5)))), axis=1).data
    assert np.allclose(p, 1 / 3)


@given(st.integers(0, 10**6), st.integers(2, 5), st.sampled_from([16, 32]))
def test_instance_shapes_finite_and_param_count(seed, cells, width):
    g = random_genotype(np.random.default_rng(seed))
    try:
        net = NetworkInstance(g, cells, width, 6, 4, seed=seed)
    except ConfigurationError:
        return
    out = net.forward(Tensor(np.random.default_rng(seed).normal(size=(3, 6))))
    assert out.shape == (3, 4) and np.all(np.isfinite(out.data))
    assert net.params.count() == instance_param_count(g, cells, width, 6, 4)


def test_supernet_weights_sum_to_one_and_all_branches():
    net = Supernet(3, 16, 6, 3, seed=0)
    for kind in ("normal", "reduce"):
        w = net.weights_numpy(kind)
        assert np.abs(w.sum(axis=1) - 1).max() < 1e-9
    for k in range(3):
        for e in range(NUM_EDGES):
            assert len(net._edge_fns[k][e]) == NUM_OPS - 1  # every non-none candidate has a branch


@pytest.mark.parametrize("op", [OpKind.SKIP_CONNECT, OpKind.LINEAR_TANH, OpKind.GROUP_MAX_POOL, OpKind.GATED_LINEAR])
def test_saturated_alpha_selects_branch(op):
    net = Supernet(3, 16, 6, 3, seed=1)
    alpha = np.zeros((NUM_EDGES, NUM_OPS))
    alpha[:, op] = 50.0
    net.params["alpha_normal"].data = alpha
    x = Tensor(np.random.default_rng(0).normal(size=(4, 16)))
    weights = net.edge_weights("normal")
    for e in range(NUM_EDGES):
        fn = dict(net._edge_fns[0][e])[int(op)]
        assert np.abs(net.mixed_op(0, e, x, weights).data - fn(x).data).max() < 1e-9


def test_uniform_alpha_averages_branches():
    net = Supernet(3, 16, 6, 3, seed=2, alpha_scale=0.0)
    x = Tensor(np.random.default_rng(3).normal(size=(2, 16)))
    weights = net.edge_weights("normal")
    branches = [fn(x).data for _, fn in net._edge_fns[0][4]]
    assert np.allclose(net.mixed_op(0, 4, x, weights).data, sum(branches) / NUM_OPS)


def test_mixed_op_alpha_gradient_matches_finite_differences():
    net = Supernet(3, 16, 6, 3, seed=4)
    x = Tensor(np.random.default_rng(5).normal(size=(3, 16)))
    alpha = net.params["alpha_normal"]

    def value():
        return float(ad.tsum(ad.tanh(net.mixed_op(0, 3, x, net.edge_weights("normal")))).item())

    with Tape() as tape:
        loss = ad.tsum(ad.tanh(net.mixed_op(0, 3, x, net.edge_weights("normal"))))
    g = ad.backward(tape, loss, {"a": alpha})
    num = ad.finite_diff_grad(value, {"a": alpha}, h=1e-6)
    assert ad.max_relative_error(g, num, floor=1e-6) < 1e-4


def test_supernet_mask_must_keep_an_op():
    masks = {k: np.ones((NUM_EDGES, NUM_OPS), dtype=bool) for k in ("normal", "reduce")}
    masks["normal"][0] = False
    with pytest.raises(ConfigurationError):
        Supernet(3, 16, 4, 2, masks=masks)
