import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from naspoison import autodiff as ad
from naspoison.attacks import (
    GcConfig,
    PoisonBudget,
    canceling_loss,
    choose_rows,
    clf,
    clf_from_logits,
    dump_samples,
    gaussian_noise,
    gradient_canceling,
    gradpc_targets,
    nas_gc,
    rlf,
)
from naspoison.attacks.budget import bounded_add
from naspoison.attacks.gc import _param_grads
from naspoison.autodiff import ARCH, WEIGHTS, ParamStore, Tensor
from naspoison.data import Dataset, fit_normalizer, generate_synthetic, poison_count
from naspoison.errors import ConfigurationError
from naspoison.nn import MLP, train_model
from naspoison.space import Supernet


def _blobs(n=80, d=6, c=3, seed=0):
    return generate_synthetic("blobs", n, d, c, seed=seed)


# ------------------------------------------------------------------ budgets


def test_budget_bounds():
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ConfigurationError):
            PoisonBudget(bad)
    assert PoisonBudget(0.5).count(7) == 3
    assert choose_rows(10, 0.05, np.random.default_rng(0)).size == 0


# --------------------------------------------------------------------- RLF


@given(st.integers(2, 6), st.floats(0.01, 1.0), st.integers(0, 1000))
@settings(max_examples=25)
def test_rlf_properties(c, p, seed):
    ds = generate_synthetic("blobs", 60, 3, c, seed=1)
    out = rlf(ds, p, np.random.default_rng(seed))
    flipped = out.poison_mask
    assert flipped.sum() == poison_count(ds.n, p)
    assert np.all(out.labels[flipped] != ds.labels[flipped])
    assert np.array_equal(out.labels[~flipped], ds.labels[~flipped])
    assert out.features.tobytes() == ds.features.tobytes()


def test_rlf_full_budget_two_classes_inverts_everything():
    ds = _blobs(c=2)
    out = rlf(ds, 1.0, np.random.default_rng(0))
    assert np.array_equal(out.labels, 1 - ds.labels)


def test_rlf_needs_two_classes():
    ds = Dataset(np.zeros((3, 2)), np.zeros(3, dtype=int), 1)
    with pytest.raises(ConfigurationError):
        rlf(ds, 0.5, np.random.default_rng(0))


# --------------------------------------------------------------------- CLF


def _clf_oracle(labels, logits, p):
    k = poison_count(len(labels), p)  # the count rule is checked on its own; this oracle checks the ranking
    ranked = sorted(range(len(labels)), key=lambda i: (-max(logits[i]), i))[:k]
    y = list(labels)
    for i in ranked:
        order = sorted(range(len(logits[i])), key=lambda c: (logits[i][c], c))
        y[i] = order[0] if order[0] != labels[i] else order[1]
    return y, sorted(ranked)


def test_clf_worked_fixture():
    logits = np.array([[5.0, 0.0, -1.0], [1.0, 0.5, 0.0], [-2.0, 3.0, 0.0], [2.0, 0.0, 1.0]])
    labels = np.array([0, 0, 1, 0])
    y, rows = clf_from_logits(labels, logits, 0.5)
    assert rows.tolist() == [0, 2]
    assert y.tolist() == [2, 0, 0, 0]
    oy, orows = _clf_oracle(labels.tolist(), logits.tolist(), 0.5)
    assert y.tolist() == oy and rows.tolist() == orows


def test_clf_argmin_and_second_least():
    logits = np.array([[4.1, -2.0, 0.3]])
    y, _ = clf_from_logits(np.array([0]), logits, 1.0)
    assert y.tolist() == [1]
    y, _ = clf_from_logits(np.array([1]), logits, 1.0)
    assert y.tolist() == [2]


def test_clf_zero_count_is_identity():
    logits = np.random.default_rng(0).normal(size=(4, 3))
    labels = np.array([0, 1, 2, 0])
    y, rows = clf_from_logits(labels, logits, 0.1)
    assert rows.size == 0 and np.array_equal(y, labels)


@given(st.integers(0, 1000), st.floats(0.01, 1.0))
@settings(max_examples=30)
def test_clf_matches_sort_oracle(seed, p):
    rng = np.random.default_rng(seed)
    logits = np.round(rng.normal(size=(12, 4)), 1)  # rounding creates ties
    labels = rng.integers(0, 4, size=12)
    y, rows = clf_from_logits(labels, logits, p)
    oy, orows = _clf_oracle(labels.tolist(), logits.tolist(), p)
    assert y.tolist() == oy and rows.tolist() == orows


def test_clf_end_to_end_labels_only():
    ds = _blobs()
    out = clf(ds, 0.25, seed=0)
    assert out.poison_mask.sum() == poison_count(ds.n, 0.25)
    assert out.features.tobytes() == ds.features.tobytes()
    assert np.all(out.labels[out.poison_mask] != ds.labels[out.poison_mask])
    assert np.array_equal(out.labels[~out.poison_mask], ds.labels[~out.poison_mask])
    assert np.array_equal(clf(ds, 0.25, seed=0).labels, out.labels)


# ------------------------------------------------------------------- noise


def test_noise_bound_and_untouched_rows():
    ds = _blobs(200, 10)
    out = gaussian_noise(ds, 0.5, np.random.default_rng(0))
    delta = out.features - ds.features
    assert np.abs(delta).max() <= 16.0
    assert out.features.min() >= 0 and out.features.max() <= 255
    assert out.poison_mask.sum() == 100
    assert out.features[~out.poison_mask].tobytes() == ds.features[~out.poison_mask].tobytes()
    assert out.labels.tobytes() == ds.labels.tobytes()


def test_noise_sigma_zero_is_identity():
    ds = _blobs()
    out = gaussian_noise(ds, 1.0, np.random.default_rng(0), sigma=0.0)
    assert out.features.tobytes() == ds.features.tobytes()


def test_noise_pre_clamp_std_monte_carlo():
    ds = Dataset(np.full((1000, 100), 128.0), np.zeros(1000, dtype=int), 2)
    out = gaussian_noise(ds, 1.0, np.random.default_rng(0), epsilon=1e9)
    delta = (out.features - ds.features).ravel()
    assert delta.size == 100_000
    assert abs(delta.std() - 16.0) < 0.5


# ------------------------------------------------------------------ GradPC


class _Logistic:
    """Two-class logits [0, w x] with a single weight."""

    num_classes = 2

    def __init__(self, w: float):
        self.params = ParamStore()
        self.params.add("w", np.array([[w]]), WEIGHTS)

    def forward(self, x):
        z = ad.matmul(x, self.params["w"])
        return ad.concat([Tensor(np.zeros(z.shape)), z], axis=1)


def test_gradpc_zero_bound_is_identity():
    net = MLP([3, 4, 2], seed=0)
    x, y = np.random.default_rng(0).normal(size=(10, 3)), np.zeros(10, dtype=int)
    res = gradpc_targets(net, x, y, bound=0.0)
    for n, v in res.theta.items():
        assert np.array_equal(v, net.params[n].data)


def test_gradpc_raises_loss_and_respects_bound():
    ds = _blobs(120, 4)
    net = MLP([4, 8, 3], seed=0)
    norm = fit_normalizer(ds)
    train_model(net, ds, norm, 10, seed=0)
    before = {n: net.params[n].data.copy() for n in net.params.names()}
    res = gradpc_targets(net, norm.transform(ds.features), ds.labels, bound=0.5)
    assert res.loss_after > res.loss_before
    for n, v in res.theta.items():
        rms = np.sqrt(np.mean(before[n] ** 2)) or 1.0
        assert np.abs(v - before[n]).max() <= 0.5 * rms + 1e-12
        assert np.array_equal(net.params[n].data, before[n])  # net restored


@pytest.mark.parametrize("w,label", [(0.7, 0), (0.7, 1), (-1.3, 0), (-1.3, 1)])
def test_gradpc_logistic_sign_matches_analytic_gradient(w, label):
    x = np.array([[1.5], [0.4]])
    y = np.array([label, label])
    s = 1.0 / (1.0 + np.exp(-w * x[:, 0]))
    analytic = np.mean((s - label) * x[:, 0])  # d mean CE / dw
    res = gradpc_targets(_Logistic(w), x, y, bound=0.1, steps=1)
    assert np.sign(res.theta["w"][0, 0] - w) == np.sign(analytic)


# ---------------------------------------------------------------------- GC


def _trained(ds, hidden=8, seed=0):
    net = MLP([ds.d, hidden, ds.num_classes], seed=seed)
    norm = fit_normalizer(ds)
    train_model(net, ds, norm, 10, seed=seed)
    return net, norm


def test_bounded_add_exact():
    x0 = np.array([0.1, 254.9, 100.3, 7.77])
    delta = np.array([-16.0, 16.0, 16.0, -16.0])
    x = bounded_add(x0, delta, 16.0)
    assert np.all(np.abs(x - x0) <= 16.0) and x.min() >= 0 and x.max() <= 255


def test_gc_bounds_labels_and_loss_decrease():
    ds = _blobs(60, 5)
    net, norm = _trained(ds)
    tgt = gradpc_targets(net, norm.transform(ds.features), ds.labels)
    res = gradient_canceling(net, tgt.theta, ds, 0.5, norm, np.random.default_rng(1), GcConfig(steps=20))
    out = res.dataset
    delta = out.features - ds.features
    assert np.abs(delta).max() <= 16.0
    assert out.features.min() >= 0 and out.features.max() <= 255
    assert out.labels.tobytes() == ds.labels.tobytes()
    assert out.poison_mask.sum() == 30 and np.array_equal(np.flatnonzero(out.poison_mask), res.rows)
    assert out.features[~out.poison_mask].tobytes() == ds.features[~out.poison_mask].tobytes()
    assert res.final_loss <= res.initial_loss
    assert res.trajectory[0][0] == 0 and len(res.trajectory) <= 21


def test_gc_full_budget_objective_is_half_adv_gradient_norm():
    ds = _blobs(40, 4)
    net, norm = _trained(ds)
    theta = {n: net.params[n].data.copy() for n in net.params.names(WEIGHTS)}
    res = gradient_canceling(net, theta, ds, 1.0, norm, np.random.default_rng(0), GcConfig(steps=5))
    assert res.rows.size == ds.n
    g = _param_grads(net, norm.transform(ds.features), ds.labels, list(theta))
    assert res.initial_loss == pytest.approx(0.5 * sum(float((v ** 2).sum()) for v in g.values()), rel=1e-12)
    zeros = {n: np.zeros_like(v) for n, v in g.items()}
    loss, _ = canceling_loss(zeros, g, 1.0)
    assert loss == pytest.approx(res.initial_loss, rel=1e-12)


def test_gc_trajectory_csv(tmp_path):
    ds = _blobs(30, 4)
    net, norm = _trained(ds)
    theta = {n: net.params[n].data.copy() for n in net.params.names(WEIGHTS)}
    res = gradient_canceling(net, theta, ds, 0.5, norm, np.random.default_rng(0), GcConfig(steps=3))
    res.write_trajectory(tmp_path / "sub" / "traj.csv")
    lines = (tmp_path / "sub" / "traj.csv").read_text().splitlines()
    assert lines[0] == "step,loss" and len(lines) == len(res.trajectory) + 1


def test_gc_config_validation():
    with pytest.raises(ConfigurationError):
        GcConfig(steps=0)
    with pytest.raises(ConfigurationError):
        GcConfig(target="everything")
    assert GcConfig.from_dict({"betas": [0.8, 0.9]}).betas == (0.8, 0.9)


def test_nas_gc_requires_artifacts():
    ds = _blobs()
    with pytest.raises(ConfigurationError):
        nas_gc("model_weights", {}, ds, 0.1, np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        nas_gc("architectural_params", {"model": MLP([6, 3])}, ds, 0.1, np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        nas_gc("other", {}, ds, 0.1, np.random.default_rng(0))


def test_nas_gc_model_weights_reduces_to_gradient_canceling():
    ds = _blobs(50, 4)
    net, norm = _trained(ds)
    cfg = GcConfig(steps=4, craft_batch=20)
    a = nas_gc("model_weights", {"model": net, "normalizer": norm}, ds, 0.3, np.random.default_rng(5), cfg)
    rng = np.random.default_rng(5)
    rows = choose_rows(ds.n, 0.3, rng)
    craft = rng.choice(ds.n, size=20, replace=False)
    tgt = gradpc_targets(net, norm.transform(ds.features[craft]), ds.labels[craft], cfg.gradpc_bound, WEIGHTS,
                         cfg.gradpc_steps)
    b = gradient_canceling(net, tgt.theta, ds, 0.3, norm, rng, cfg, rows=rows)
    assert a.dataset.features.tobytes() == b.dataset.features.tobytes()
    assert a.trajectory == b.trajectory


def test_nas_gc_architectural_params_targets_alpha_only():
    ds = _blobs(40, 4)
    net = Supernet(2, 16, ds.d, ds.num_classes, seed=0)
    norm = fit_normalizer(ds)
    before = {n: net.params[n].data.copy() for n in net.params.names()}
    tgt = gradpc_targets(net, norm.transform(ds.features), ds.labels, group=ARCH)
    assert sorted(tgt.theta) == ["alpha_normal", "alpha_reduce"]
    res = nas_gc("architectural_params", {"supernet": net, "normalizer": norm}, ds, 0.25,
                 np.random.default_rng(0), GcConfig(steps=2, craft_batch=16))
    assert res.dataset.poison_mask.sum() == poison_count(ds.n, 0.25)
    assert res.dataset.labels.tobytes() == ds.labels.tobytes()
    for n, v in before.items():
        assert np.array_equal(net.params[n].data, v)


def test_dump_samples(tmp_path):
    ds = _blobs()
    out = gaussian_noise(ds, 0.5, np.random.default_rng(0))
    path = dump_samples(ds, out, tmp_path / "d.csv", limit=3)
    assert path.exists() and len(path.read_text().splitlines()) >= 2
