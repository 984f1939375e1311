"""Random differentiable graphs shared by the gradient tests."""

import numpy as np

from naspoison import autodiff as ad
from naspoison.autodiff import ParamStore, Tape, Tensor

UNARY = ("relu", "tanh", "sigmoid", "square", "scale", "exp")
WIDTH = 4


def random_graph(seed: int):
    """Returns (params, loss_fn) where loss_fn() builds and evaluates a fresh graph."""
    rng = np.random.default_rng(seed)
    batch = int(rng.integers(2, 5))
    x = rng.normal(size=(batch, WIDTH))
    labels = rng.integers(0, WIDTH, size=batch)
    store = ParamStore()
    depth = int(rng.integers(3, 8))
    plan = []
    for k in range(depth):
        kind = rng.choice(["matmul", "bias", "unary", "mul", "concat_pool", "softmax", "take"])
        if kind == "matmul":
            store.add(f"W{k}", rng.normal(0, 0.6, size=(WIDTH, WIDTH)))
        elif kind == "bias":
            store.add(f"b{k}", rng.normal(0, 0.5, size=(1, WIDTH)))
        plan.append((str(kind), str(rng.choice(UNARY)), str(rng.choice(["avg", "max"]))))
    store.add("W_out", rng.normal(0, 0.6, size=(WIDTH, WIDTH)))
    loss_kind = str(rng.choice(["xent", "mean_sq", "sum", "log_softmax"]))

    def forward():
        h = Tensor(x)
        prev = h
        for k, (kind, unary, pool) in enumerate(plan):
            cur = h
            if kind == "matmul":
                h = ad.matmul(h, store[f"W{k}"])
            elif kind == "bias":
                h = ad.add(h, store[f"b{k}"])
            elif kind == "unary":
                if unary == "scale":
                    h = ad.scale(h, 0.7)
                elif unary == "exp":
                    h = ad.exp(ad.scale(ad.tanh(h), 0.5))
                else:
                    h = getattr(ad, unary)(h)
            elif kind == "mul":
                h = ad.mul(h, ad.tanh(prev))
            elif kind == "concat_pool":
                wide = ad.concat([h, ad.tanh(prev)], axis=1)
                groups = np.array([[2 * j, 2 * j + 1, (2 * j + 5) % (2 * WIDTH)] for j in range(WIDTH)])
                h = ad.group_avg(wide, groups) if pool == "avg" else ad.group_max(wide, groups)
            elif kind == "softmax":
                h = ad.softmax(h, axis=1)
            elif kind == "take":
                h = ad.concat([ad.take(h, [1, 0], axis=1), ad.take(h, [3, 2], axis=1)], axis=1)
            prev = cur
        logits = ad.matmul(h, store["W_out"])
        if loss_kind == "xent":
            return ad.cross_entropy(logits, labels)
        if loss_kind == "mean_sq":
            return ad.mean(ad.square(logits))
        if loss_kind == "sum":
            return ad.tsum(ad.tanh(logits))
        return ad.scale(ad.mean(ad.pick(ad.log_softmax(logits, axis=1), labels)), -1.0)

    def loss_value():
        return forward().item()

    def grads():
        with Tape() as tape:
            loss = forward()
        return ad.backward(tape, loss, store)

    return store, loss_value, grads


def check_graph(seed: int, h: float = 1e-6, floor: float = 1e-3) -> float:
    store, value, grads = random_graph(seed)
    analytic = grads()
    numeric = ad.finite_diff_grad(value, dict(store.named_tensors()), h=h)
    return ad.max_relative_error(analytic, numeric, floor=floor)
