import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from catgnn import autodiff as ad
from catgnn.errors import InvalidSplit, ShapeError
from catgnn.graph import Adjacency, DatasetSplit, MultiRelationGraph, UNLABELED
from catgnn.model import CatGnnParams, ModelConfig, forward
from catgnn.trainer import (AdamState, TrainConfig, adam_step, batch_loss, train, visible_labels)
from conftest import make_small_graph
from oracles import bce_l2_reference


def test_train_defaults():
    c = TrainConfig()
    assert (c.learning_rate, c.batch_size, c.epochs, c.early_stop_patience) == (0.003, 256, 100, 10)
    assert (c.beta1, c.beta2, c.eps, c.weight_decay) == (0.9, 0.999, 1e-8, 1e-4)


def test_adam_zero_gradient_is_fixed_point():
    p = {"w": np.array([[1.5, -2.0]])}
    new, state = adam_step(p, {"w": np.zeros((1, 2))})
    assert np.array_equal(new["w"], p["w"]) and state.t == 1


def test_adam_first_step():
    new, _ = adam_step({"w": np.zeros((1, 1))}, {"w": np.ones((1, 1))}, lr=0.003)
    assert new["w"][0, 0] == pytest.approx(-0.003, rel=1e-6)


def test_adam_is_pure():
    p = {"w": np.array([[0.5]])}
    g = {"w": np.array([[0.2]])}
    s = AdamState(3, {"w": np.array([[0.1]])}, {"w": np.array([[0.01]])})
    a, sa = adam_step(p, g, s)
    b, sb = adam_step(p, g, s)
    assert np.array_equal(a["w"], b["w"]) and np.array_equal(sa.m["w"], sb.m["w"])
    assert s.t == 3 and p["w"][0, 0] == 0.5


def test_adam_weight_decay_folds_into_gradient():
    p = {"w": np.array([[2.0]])}
    a, _ = adam_step(p, {"w": np.array([[0.0]])}, weight_decay=0.1)
    b, _ = adam_step(p, {"w": np.array([[0.4]])})
    assert np.array_equal(a["w"], b["w"])


def test_adam_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_step({"w": np.zeros((2, 1))}, {"w": np.zeros((1, 2))})


def _tensors(params):
    return {k: ad.constant(v) for k, v in params.as_dict().items()}


@pytest.mark.parametrize("eta", [0.0, 1e-4, 0.05])
@pytest.mark.parametrize("seed", range(4))
def test_loss_matches_scripted_bce_l2(eta, seed):
    g, split = make_small_graph(seed)
    cfg = ModelConfig(hidden_dim=4, num_heads=2, dropout=0.0, variant="PI", r_e=0.4)
    params = CatGnnParams.init(g.feature_dim, cfg, seed)
    vis = visible_labels(g, split.train_ids)
    batch = np.arange(g.num_nodes)
    loss = batch_loss(g, batch, _tensors(params), cfg, eta, vis).value[0, 0]
    logits = forward(g, batch, params, cfg, visible_labels=vis)
    keep = g.labels != UNLABELED
    ref = bce_l2_reference(logits[keep], g.labels[keep], params.as_dict(), eta)
    assert abs(loss - ref) <= 1e-10


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.lists(st.integers(0, 1), min_size=3, max_size=3))
def test_hidden_truth_never_reaches_loss(seed, truth):
    """Whatever the hidden labels of unlabeled nodes are, the training loss is the same."""
    g, split = make_small_graph(seed % 30)
    cfg = ModelConfig(hidden_dim=4, num_heads=2, dropout=0.0, variant="PL", r_e=0.4)
    params = _tensors(CatGnnParams.init(g.feature_dim, cfg, seed))
    vis = visible_labels(g, split.train_ids)
    base = batch_loss(g, split.train_ids, params, cfg, 1e-4, vis).value[0, 0]
    # reveal the unlabeled nodes as graph labels; the visible vector keeps them hidden
    labels = g.labels.copy()
    labels[labels == UNLABELED] = truth
    revealed = MultiRelationGraph(g.features, labels, g.relations)
    again = batch_loss(revealed, split.train_ids, params, cfg, 1e-4, vis).value[0, 0]
    assert base == again


def test_visible_labels_expose_only_training_nodes(small_graph):
    g, split = small_graph
    vis = visible_labels(g, split.train_ids)
    assert np.array_equal(vis[split.train_ids], g.labels[split.train_ids])
    rest = np.setdiff1d(np.arange(g.num_nodes), split.train_ids)
    assert np.all(vis[rest] == UNLABELED)


def _separable_graph():
    """12 nodes, fraud = positive first feature, edges only within class."""
    f = np.zeros((12, 2))
    f[:, 0] = np.r_[np.linspace(1, 2, 6), -np.linspace(1, 2, 6)]
    f[:, 1] = np.tile([0.3, -0.3], 6)
    labels = np.r_[np.ones(6), np.zeros(6)].astype(np.int64)
    pairs = [(i, j) for block in (range(6), range(6, 12)) for i in block for j in block if i < j]
    src, dst = np.array(pairs).T
    adj = Adjacency.from_edges(12, src, dst, symmetric=True)
    split = DatasetSplit([0, 1, 2, 3, 6, 7, 8, 9], [4, 10], [5, 11])
    return MultiRelationGraph(f, labels, (adj,)), split


def test_separable_fixture_trains_to_zero_error():
    g, split = _separable_graph()
    mc = ModelConfig(hidden_dim=8, num_heads=2, dropout=0.0)
    tc = TrainConfig(learning_rate=0.01, epochs=30, batch_size=8, early_stop_patience=30, seed=1)
    params, report = train(g, split, mc, tc)
    assert all(b < a for a, b in zip(report.train_loss[:5], report.train_loss[1:5]))
    vis = visible_labels(g, split.train_ids)
    probs = 1 / (1 + np.exp(-forward(g.standardized(), split.train_ids, params, mc, visible_labels=vis)))
    assert np.array_equal((probs >= 0.5).astype(int), g.labels[split.train_ids])


def test_training_is_deterministic(small_graph, tiny_config):
    g, split = small_graph
    tc = TrainConfig(epochs=4, batch_size=3, seed=9)
    cfg = tiny_config.with_variant("PL", dropout=0.2)
    pa, ra = train(g, split, cfg, tc)
    pb, rb = train(g, split, cfg, tc)
    assert ra.to_json(timings=False) == rb.to_json(timings=False)
    for k, v in pa.as_dict().items():
        assert np.array_equal(v, pb.as_dict()[k])


def test_early_stopping_returns_best_epoch(small_graph, tiny_config):
    g, split = small_graph
    tc = TrainConfig(epochs=40, batch_size=4, early_stop_patience=3, learning_rate=0.05, seed=2)
    params, report = train(g, split, tiny_config, tc)
    keys = [(m["auc"], -m["bce"]) for m in report.valid_metrics]
    scores = [k[0] for k in keys]
    assert report.best_epoch == max(range(len(keys)), key=lambda e: (keys[e], -e))
    assert len(scores) - 1 - report.best_epoch <= tc.early_stop_patience
    if report.stopped_early:
        assert len(scores) - 1 - report.best_epoch == tc.early_stop_patience
    # returned parameters reproduce the best epoch's validation AUC
    from catgnn.trainer import evaluate_ids
    res = evaluate_ids(g.standardized(), split.valid_ids, params, tiny_config,
                       visible_labels(g, split.train_ids))
    assert res.auc == report.best_score


def test_no_labeled_training_nodes(small_graph, tiny_config):
    g, split = small_graph
    empty = DatasetSplit([], split.valid_ids, split.test_ids)
    with pytest.raises(InvalidSplit):
        train(g, empty, tiny_config, TrainConfig(epochs=1))


def test_report_serializes(small_graph, tiny_config):
    import json
    g, split = small_graph
    _, report = train(g, split, tiny_config, TrainConfig(epochs=2))
    doc = json.loads(report.to_json())
    assert len(doc["train_loss"]) == len(doc["epoch_seconds"]) == 2
    assert doc["config"]["model"]["variant"] == "PL"
    assert report.steps == 2
