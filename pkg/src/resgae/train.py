"""Full-graph training with Adam and seeded multi-run orchestration."""
from __future__ import annotations

import logging
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .graph import EdgeSplit, Graph, normalize, split_edges
from .metrics import evaluate_split
from .models import KL_NORMS, EncoderConfig, LossContext, build_encoder, encode, model_loss, save_checkpoint
from .tensor import Tape, Tensor, make_rng

log = logging.getLogger(__name__)

TRAIN_STREAM = 0
# largest graph trained with the dense N^2 loss when loss_mode is "auto"
FULL_LOSS_MAX_NODES = 5000


class NonFiniteLossError(FloatingPointError):
    def __init__(self, epoch: int, value: float):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}")
        self.epoch = epoch
        self.value = value


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    runs: int = 10
    base_seed: int = 0
    loss_mode: str = "auto"
    kl_norm: str = "nodes_squared"
    eval_every: int = 0  # 0 disables validation logging
    checked: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.loss_mode not in ("auto", "full_matrix_weighted", "balanced_sampled"):
            raise ValueError(f"unknown loss mode {self.loss_mode!r}")
        if self.kl_norm not in KL_NORMS:
            raise ValueError(f"kl_norm must be one of {KL_NORMS}")

    def resolved_loss(self, num_nodes: int) -> str:
        if self.loss_mode != "auto":
            return self.loss_mode
        return "full_matrix_weighted" if num_nodes <= FULL_LOSS_MAX_NODES else "balanced_sampled"


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: list[Tensor]) -> "AdamState":
        return cls([np.zeros_like(p.value) for p in params], [np.zeros_like(p.value) for p in params])


def adam_step(params: list[Tensor], state: AdamState, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update in place; clears the gradients."""
    missing = [p.name or i for i, p in enumerate(params) if p.grad is None]
    if missing:
        raise ValueError(f"no gradient for parameter(s) {missing}")
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
        p.grad = None


@dataclass
class RunResult:
    run_index: int
    seed: int
    final_test_auc: float
    final_test_ap: float
    loss_trace: list[float]
    duration: float
    val_trace: list[tuple[int, float, float]] = field(default_factory=list)
    params: object = field(default=None, repr=False)


@dataclass(frozen=True)
class Aggregate:
    runs: int
    auc_mean: float
    auc_std: float
    ap_mean: float
    ap_std: float

    def summary(self) -> str:
        return (
            f"AUC {100 * self.auc_mean:.2f} ± {100 * self.auc_std:.2f} / "
            f"AP {100 * self.ap_mean:.2f} ± {100 * self.ap_std:.2f}"
        )


def aggregate(results: list[RunResult]) -> Aggregate:
    results = sorted(results, key=lambda r: r.run_index)
    aucs = [r.final_test_auc for r in results]
    aps = [r.final_test_ap for r in results]
    std = (lambda xs: statistics.stdev(xs)) if len(results) > 1 else (lambda xs: 0.0)
    return Aggregate(len(results), statistics.fmean(aucs), std(aucs), statistics.fmean(aps), std(aps))


def train_single(
    g: Graph,
    split: EdgeSplit,
    enc_cfg: EncoderConfig,
    train_cfg: TrainConfig,
    seed: int,
    run_index: int = 0,
    checkpoint=None,
) -> RunResult:
    """Train one model for ``train_cfg.epochs`` epochs and score it on the test edges.

    Initialisation, reparameterisation noise and negative resampling all draw
    from one generator seeded with ``seed``.
    """
    start = time.perf_counter()
    rng = make_rng(seed, TRAIN_STREAM)
    train_graph = split.train_graph
    adj = normalize(train_graph)
    x = Tensor(train_graph.features)
    mode = train_cfg.resolved_loss(train_graph.num_nodes)
    ctx = LossContext.for_graph(train_graph, mode)
    params = build_encoder(enc_cfg, rng)
    weights = params.tensors()
    state = AdamState.for_params(weights)
    trace: list[float] = []
    val_trace = []
    prev_checked = T._checked
    T.set_checked(train_cfg.checked)
    try:
        for epoch in range(1, train_cfg.epochs + 1):
            with Tape() as tape:
                out = encode(params, adj, x, rng)
                loss = model_loss(out, ctx, mode, rng, train_cfg.kl_norm)
            value = loss.item()
            if not np.isfinite(value):
                raise NonFiniteLossError(epoch, value)
            trace.append(value)
            T.backward(loss, tape)
            adam_step(weights, state, train_cfg)
            if train_cfg.checked:
                for w in weights:
                    if not np.all(np.isfinite(w.value)):
                        raise T.NonFiniteError(f"parameter {w.name} non-finite after epoch {epoch}")
            if train_cfg.eval_every and epoch % train_cfg.eval_every == 0:
                emb = encode(params, adj, x, eps=0.0).embedding
                v_auc, v_ap = evaluate_split(emb, split, "val")
                val_trace.append((epoch, v_auc, v_ap))
                log.info("run %d epoch %d loss %.5f val auc %.4f ap %.4f", run_index, epoch, value, v_auc, v_ap)
    finally:
        T.set_checked(prev_checked)

    # scoring uses the posterior mean, so evaluation consumes no randomness
    final = encode(params, adj, x, eps=0.0)
    test_auc, test_ap = evaluate_split(final.embedding, split, "test")
    if checkpoint is not None:
        save_checkpoint(params, checkpoint)
    return RunResult(
        run_index=run_index,
        seed=seed,
        final_test_auc=test_auc,
        final_test_ap=test_ap,
        loss_trace=trace,
        duration=time.perf_counter() - start,
        val_trace=val_trace,
        params=params,
    )


def run_seed(train_cfg: TrainConfig, run_index: int) -> int:
    return train_cfg.base_seed + run_index


def _one_run(args) -> RunResult:
    g, enc_cfg, train_cfg, r = args
    seed = run_seed(train_cfg, r)
    res = train_single(g, split_edges(g, seed), enc_cfg, train_cfg, seed, run_index=r)
    res.params = None  # not shipped back across processes
    return res


def train_multi(
    g: Graph, enc_cfg: EncoderConfig, train_cfg: TrainConfig, jobs: int = 1
) -> tuple[list[RunResult], Aggregate]:
    """``train_cfg.runs`` independent runs; run r re-splits and trains with seed base_seed + r."""
    tasks = [(g, enc_cfg, train_cfg, r) for r in range(train_cfg.runs)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_one_run, tasks))
    else:
        results = [_one_run(t) for t in tasks]
    results.sort(key=lambda r: r.run_index)
    return results, aggregate(results)
