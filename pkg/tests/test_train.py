import numpy as np
import pytest

from resgae.graph import normalize, split_edges
from resgae.metrics import auc
from resgae.models import EncoderConfig, decode_dense, encode
from resgae.tensor import Tensor
from resgae.train import (
    AdamState,
    NonFiniteLossError,
    TrainConfig,
    adam_step,
    aggregate,
    train_multi,
    train_single,
)

from .conftest import planted_partition, two_cluster_graph


def test_adam_first_step_size():
    cfg = TrainConfig(lr=0.01)
    p = Tensor([[1.0, -2.0, 0.0]], requires_grad=True)
    p.grad = np.array([[0.3, -5.0, 1e-3]])
    adam_step([p], AdamState.for_params([p]), cfg)
    # bias-corrected first step is lr * g / (|g| + eps)
    g = np.array([0.3, -5.0, 1e-3])
    expected = np.array([1.0, -2.0, 0.0]) - 0.01 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(p.value[0], expected, rtol=1e-15, atol=1e-17)
    assert p.grad is None


def test_adam_zero_gradient_is_noop():
    p = Tensor([[1.5, 2.5]], requires_grad=True)
    state = AdamState.for_params([p])
    for _ in range(3):
        p.grad = np.zeros((1, 2))
        adam_step([p], state, TrainConfig())
    assert p.value.tolist() == [[1.5, 2.5]]


def test_adam_missing_gradient_raises():
    p = Tensor([[1.0]], requires_grad=True)
    with pytest.raises(ValueError):
        adam_step([p], AdamState.for_params([p]), TrainConfig())


def test_train_config_validation():
    for bad in (dict(epochs=0), dict(lr=0.0), dict(runs=0), dict(loss_mode="x"), dict(kl_norm="x")):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    assert TrainConfig().resolved_loss(2708) == "full_matrix_weighted"
    assert TrainConfig().resolved_loss(19717) == "balanced_sampled"
    assert TrainConfig(loss_mode="balanced_sampled").resolved_loss(10) == "balanced_sampled"


@pytest.mark.parametrize("kind", ["GAE", "VGAE", "ResGAE", "ResVGAE"])
def test_loss_decreases(kind):
    g = two_cluster_graph()
    split = split_edges(g, 0)
    res = train_single(g, split, EncoderConfig(kind, 3, g.num_features), TrainConfig(epochs=50), seed=0)
    assert len(res.loss_trace) == 50
    assert np.mean(res.loss_trace[-5:]) < res.loss_trace[0]
    assert 0.0 <= res.final_test_auc <= 1.0 and 0.0 <= res.final_test_ap <= 1.0


def test_gae_fits_training_edges():
    g = two_cluster_graph()
    split = split_edges(g, 0)
    # sigmoid hidden units saturate on this tiny graph and reach only ~0.86
    cfg = EncoderConfig("GAE", 2, g.num_features, activation="relu")
    res = train_single(g, split, cfg, TrainConfig(epochs=200), seed=0)
    tg = split.train_graph
    probs = decode_dense(encode(res.params, normalize(tg), Tensor(tg.features)).z).value
    adj = tg.adjacency().toarray()
    iu = np.triu_indices(g.num_nodes, 1)
    assert auc(probs[iu], adj[iu]) > 0.95


def test_training_is_deterministic():
    g = two_cluster_graph()
    split = split_edges(g, 1)
    cfg = EncoderConfig("ResVGAE", 3, g.num_features)
    a = train_single(g, split, cfg, TrainConfig(epochs=20), seed=4)
    b = train_single(g, split, cfg, TrainConfig(epochs=20), seed=4)
    c = train_single(g, split, cfg, TrainConfig(epochs=20), seed=5)
    assert a.loss_trace == b.loss_trace
    assert (a.final_test_auc, a.final_test_ap) == (b.final_test_auc, b.final_test_ap)
    assert a.loss_trace != c.loss_trace


def test_balanced_mode_trains():
    g = two_cluster_graph()
    split = split_edges(g, 0)
    res = train_single(
        g, split, EncoderConfig("VGAE", 2, g.num_features), TrainConfig(epochs=60, loss_mode="balanced_sampled"), 0
    )
    assert np.mean(res.loss_trace[-5:]) < res.loss_trace[0]


def test_validation_trace():
    g = two_cluster_graph()
    res = train_single(g, split_edges(g, 0), EncoderConfig("GAE", 2, 20), TrainConfig(epochs=10, eval_every=5), 0)
    assert [e for e, _, _ in res.val_trace] == [5, 10]


def test_multi_run_aggregate():
    g = two_cluster_graph()
    results, agg = train_multi(g, EncoderConfig("GAE", 2, 20), TrainConfig(epochs=5, runs=3, base_seed=10))
    assert [r.seed for r in results] == [10, 11, 12]
    assert agg.runs == 3
    assert agg.auc_mean == pytest.approx(np.mean([r.final_test_auc for r in results]))
    assert agg.ap_std == pytest.approx(np.std([r.final_test_ap for r in results], ddof=1))
    _, single = train_multi(g, EncoderConfig("GAE", 2, 20), TrainConfig(epochs=5, runs=1))
    assert single.auc_std == 0.0 and single.ap_std == 0.0


def test_parallel_runs_match_serial():
    g = two_cluster_graph()
    cfg, tc = EncoderConfig("VGAE", 2, 20), TrainConfig(epochs=5, runs=2)
    serial, _ = train_multi(g, cfg, tc, jobs=1)
    par, _ = train_multi(g, cfg, tc, jobs=2)
    assert [r.loss_trace for r in serial] == [r.loss_trace for r in par]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts():
    g = two_cluster_graph()
    feats = g.features.copy()
    feats[0, 0] = np.inf
    bad = type(g)(g.num_nodes, g.edges, feats)
    with pytest.raises(NonFiniteLossError) as info:
        train_single(bad, split_edges(bad, 0), EncoderConfig("GAE", 2, 20), TrainConfig(epochs=3), 0)
    # epoch 1 loss is finite (sigmoid saturates); the nan gradient poisons epoch 2
    assert info.value.epoch <= 2


def test_aggregate_orders_by_run_index():
    g = two_cluster_graph()
    results, _ = train_multi(g, EncoderConfig("GAE", 1, 20), TrainConfig(epochs=2, runs=2))
    assert aggregate(results[::-1]) == aggregate(results)


@pytest.mark.slow
def test_residual_resists_depth_on_community_graph():
    g = planted_partition()
    split = split_edges(g, 0)
    tc = TrainConfig(epochs=200)
    plain = train_single(g, split, EncoderConfig("GAE", 8, g.num_features), tc, 0)
    res = train_single(g, split, EncoderConfig("ResGAE", 8, g.num_features), tc, 0)
    assert res.final_test_ap > plain.final_test_ap
