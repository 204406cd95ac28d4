"""Self-checks run by ``resgae verify``: gradients, metric oracles, normalisation."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .graph import Graph, normalize
from .metrics import auc, auc_bruteforce, average_precision, average_precision_bruteforce
from .models import EncoderConfig, LossContext, build_encoder, encode, model_loss
from .tensor import Tape, Tensor, make_rng

FD_STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """max |a-b| / max(|a|, |b|, 1e-8), taken over all entries."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) / denom)


def numeric_grad(f: Callable[[], float], x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. the array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + step
        up = f()
        x[idx] = old - step
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * step)
    return g


def tape_grads(build: Callable[[], Tensor], leaves: list[Tensor]) -> list[np.ndarray]:
    for t in leaves:
        t.zero_grad()
    with Tape() as tape:
        loss = build()
    T.backward(loss, tape)
    return [t.grad if t.grad is not None else np.zeros_like(t.value) for t in leaves]


def gradient_error(build: Callable[[], Tensor], leaves: list[Tensor]) -> float:
    """Worst relative error between tape and finite-difference gradients."""
    analytic = tape_grads(build, leaves)
    worst = 0.0
    for t, ga in zip(leaves, analytic):
        gn = numeric_grad(lambda: build().item(), t.value)
        worst = max(worst, rel_error(ga, gn))
    return worst


def random_graph(n: int, p: float, rng: np.random.Generator, features: int = 0) -> Graph:
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(len(iu)) < p
    x = rng.uniform(-1, 1, size=(n, features or n))
    return Graph(n, np.c_[iu[keep], ju[keep]], x)


def _weighted_sum(t: Tensor, w: np.ndarray) -> Tensor:
    # random linear functional, so every output entry affects the check
    return T.total(T.mul(t, Tensor(w)))


def op_gradient_cases(rng: np.random.Generator):
    """(name, build, leaves) triples covering every differentiable primitive."""
    def leaf(r, c, lo=-2.0, hi=2.0):
        return Tensor(rng.uniform(lo, hi, size=(r, c)), requires_grad=True)

    r, k, c = (int(v) for v in rng.integers(1, 7, size=3))
    a, b = leaf(r, k), leaf(k, c)
    w_rc = rng.normal(size=(r, c))
    u, v = leaf(r, c), leaf(r, c)
    w = rng.normal(size=(r, c))
    n = int(rng.integers(2, 7))
    g = random_graph(n, 0.5, rng)
    adj = normalize(g)
    d = leaf(n, c)
    w_nc = rng.normal(size=(n, c))
    eps = rng.normal(size=(r, c))
    pairs = rng.integers(0, r, size=(5, 2))
    w_pairs = rng.normal(size=(5, 1))
    targets = (rng.random((r, c)) < 0.4).astype(float)
    sq_targets = (rng.random((r, r)) < 0.4).astype(float)
    z = leaf(r, c)
    return [
        ("matmul", lambda: _weighted_sum(T.matmul(a, b), w_rc), [a, b]),
        ("spmm", lambda: _weighted_sum(T.spmm(adj, d), w_nc), [d]),
        ("transpose", lambda: _weighted_sum(T.transpose(T.transpose(u)), w), [u]),
        ("add", lambda: _weighted_sum(T.add(u, v), w), [u, v]),
        ("sub", lambda: _weighted_sum(T.sub(u, v), w), [u, v]),
        ("mul", lambda: _weighted_sum(T.mul(u, v), w), [u, v]),
        ("scale", lambda: _weighted_sum(T.scale(u, -1.7), w), [u]),
        ("add_scalar", lambda: _weighted_sum(T.add_scalar(u, 0.3), w), [u]),
        ("sum", lambda: T.scale(T.total(u), 0.7), [u]),
        ("exp", lambda: _weighted_sum(T.exp(u), w), [u]),
        ("sigmoid", lambda: _weighted_sum(T.sigmoid(u), w), [u]),
        ("relu", lambda: _weighted_sum(T.relu(u), w), [u]),
        ("gaussian_sample", lambda: _weighted_sum(T.gaussian_sample(u, v, eps=eps), w), [u, v]),
        ("row_dot", lambda: _weighted_sum(T.row_dot(z, pairs[:, 0], pairs[:, 1]), w_pairs), [z]),
        ("bce_with_logits", lambda: T.bce_with_logits(u, targets, 2.5, 0.3), [u]),
        ("gram_bce_with_logits", lambda: T.gram_bce_with_logits(z, sq_targets, 2.5, 0.3, block=2), [z]),
    ]


def composed_loss_case(kind: str, rng: np.random.Generator, n: int = 6, layers: int = 3):
    """Full encoder + loss on a random ``n``-node graph, noise held fixed."""
    g = random_graph(n, 0.5, rng, features=4)
    if g.num_edges == 0:
        g = g.with_edges([(0, 1)])
    adj = normalize(g)
    x = Tensor(g.features)
    cfg = EncoderConfig(kind, layers, 4, hidden_dim=5, latent_dim=3)
    params = build_encoder(cfg, rng)
    eps = rng.normal(size=(n, 3))
    ctx = LossContext.for_graph(g, "full_matrix_weighted")

    def build():
        out = encode(params, adj, x, eps=eps)
        return model_loss(out, ctx, "full_matrix_weighted")

    return build, params.tensors()


def check_op_gradients(instances: int = 4, seed: int = 0, tol: float = 1e-4) -> CheckResult:
    t0 = time.perf_counter()
    rng = make_rng(seed)
    worst, worst_op, count = 0.0, "", 0
    for _ in range(instances):
        for name, build, leaves in op_gradient_cases(rng):
            err = gradient_error(build, leaves)
            count += 1
            if err > worst:
                worst, worst_op = err, name
    return CheckResult(
        "per-op gradients vs finite differences",
        worst < tol,
        f"{count} cases, worst rel. error {worst:.2e} ({worst_op}), tol {tol:g}",
        time.perf_counter() - t0,
    )


def check_composed_gradients(instances: int = 5, seed: int = 1, tol: float = 1e-3) -> CheckResult:
    t0 = time.perf_counter()
    rng = make_rng(seed)
    worst = 0.0
    count = 0
    for _ in range(instances):
        for kind in ("GAE", "VGAE", "ResGAE", "ResVGAE"):
            build, leaves = composed_loss_case(kind, rng)
            worst = max(worst, gradient_error(build, leaves))
            count += 1
    return CheckResult(
        "composed GAE/VGAE loss gradients",
        worst < tol,
        f"{count} models, worst rel. error {worst:.2e}, tol {tol:g}",
        time.perf_counter() - t0,
    )


def _metric_instance(rng: np.random.Generator):
    n = int(rng.integers(2, 51))
    labels = rng.integers(0, 2, size=n)
    labels[0], labels[-1] = 1, 0
    rng.shuffle(labels)
    if rng.random() < 0.5:
        scores = rng.integers(0, 4, size=n).astype(float)  # heavy ties
    else:
        scores = rng.normal(size=n)
    return scores, labels


def check_metrics(instances: int = 1000, seed: int = 2) -> CheckResult:
    t0 = time.perf_counter()
    rng = make_rng(seed)
    bad = 0
    for _ in range(instances):
        s, y = _metric_instance(rng)
        if auc(s, y) != auc_bruteforce(s, y) or average_precision(s, y) != average_precision_bruteforce(s, y):
            bad += 1
    return CheckResult(
        "AUC/AP equal brute-force oracles",
        bad == 0,
        f"{instances - bad}/{instances} exact matches",
        time.perf_counter() - t0,
    )


def dense_normalized(g: Graph) -> np.ndarray:
    a = np.zeros((g.num_nodes, g.num_nodes))
    for i, j in g.edges.tolist():
        a[i, j] = a[j, i] = 1.0
    a += np.eye(g.num_nodes)
    d = np.diag(1.0 / np.sqrt(a.sum(axis=1)))
    return d @ a @ d


def check_normalization(instances: int = 100, seed: int = 3, tol: float = 1e-12) -> CheckResult:
    t0 = time.perf_counter()
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(instances):
        g = random_graph(int(rng.integers(1, 21)), float(rng.random()), rng, features=1)
        worst = max(worst, float(np.abs(normalize(g).dense() - dense_normalized(g)).max()))
    return CheckResult(
        "sparse normalisation vs dense oracle",
        worst <= tol,
        f"{instances} graphs, max abs. deviation {worst:.1e}, tol {tol:g}",
        time.perf_counter() - t0,
    )


def run_all() -> list[CheckResult]:
    return [check_op_gradients(), check_composed_gradients(), check_metrics(), check_normalization()]
