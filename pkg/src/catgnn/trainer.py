"""Semi-supervised training: masked BCE + L2, Adam, early stopping on validation AUC."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .errors import InvalidInput, InvalidSplit, NumericsError, ShapeError, UndefinedMetric
from .graph import UNLABELED
from .metrics import evaluate
from .model import CatGnnParams, forward_tensors, predict_proba

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.003
    batch_size: int = 256
    epochs: int = 100
    early_stop_patience: int = 10
    weight_decay: float = 1e-4
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    standardize: bool = True
    eval_batch_size: int = 1024

    def validate(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise InvalidInput("learning_rate, batch_size and epochs must be positive")
        if self.early_stop_patience < 1 or self.weight_decay < 0:
            raise InvalidInput("patience must be >= 1 and weight_decay >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise InvalidInput("invalid Adam hyperparameters")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    valid_metrics: list = field(default_factory=list)
    best_epoch: int = -1
    best_score: float = float("-inf")
    test_metrics: dict | None = None
    epoch_seconds: list = field(default_factory=list)
    steps: int = 0
    stopped_early: bool = False
    config: dict = field(default_factory=dict)

    def to_dict(self, timings=True):
        d = asdict(self)
        if not timings:
            d.pop("epoch_seconds")
        return d

    def to_json(self, timings=True):
        return json.dumps(self.to_dict(timings), sort_keys=True)


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state=None, lr=0.003, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
    """One bias-corrected Adam update; returns new ``(params, state)`` without mutating inputs.

    A nonzero ``weight_decay`` adds ``2 * weight_decay * theta`` to each gradient.
    """
    state = state or AdamState()
    b1, b2 = betas
    t = state.t + 1
    new_p, new_m, new_v = {}, {}, {}
    for name, theta in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != theta.shape:
            raise ShapeError(f"{name}: grad {g.shape} vs param {theta.shape}")
        if weight_decay:
            g = g + 2.0 * weight_decay * theta
        m = state.m.get(name, np.zeros_like(theta))
        v = state.v.get(name, np.zeros_like(theta))
        if m.shape != theta.shape or v.shape != theta.shape:
            raise ShapeError(f"{name}: optimizer state does not match parameter")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_p[name] = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return new_p, AdamState(t, new_m, new_v)


def visible_labels(graph, train_ids):
    """Labels the model may read: training labels only, everything else unlabeled."""
    vis = np.full(graph.num_nodes, UNLABELED, dtype=np.int64)
    vis[train_ids] = graph.labels[train_ids]
    return vis


def batch_loss(graph, batch, p, model_config, weight_decay, visible, training=False, seed=0):
    """Mean BCE over the (labeled) batch plus ``weight_decay * ||theta||^2``."""
    logits = forward_tensors(graph, batch, p, model_config, training=training, seed=seed,
                             visible_labels=visible)
    targets = graph.labels[batch]
    mask = targets != UNLABELED
    loss = ad.bce_with_logits(logits, np.where(mask, targets, 0), mask)
    if weight_decay:
        loss = ad.add(loss, ad.scale(ad.l2_norm_sq(list(p.values())), weight_decay))
    return loss


def evaluate_ids(graph, ids, params, model_config, visible, batch_size=1024):
    """Metrics over the labeled nodes of ``ids``; None when a metric is undefined."""
    ids = np.asarray(ids, dtype=np.int64)
    ids = ids[graph.labels[ids] != UNLABELED]
    if ids.size == 0:
        return None
    probs = predict_proba(graph, ids, params, model_config, visible, batch_size)
    try:
        return evaluate(probs, graph.labels[ids])
    except UndefinedMetric:
        return None


def _validation_score(graph, ids, params, model_config, visible, batch_size):
    """Selection key ``(auc, -bce)`` on the labeled validation nodes, plus a metrics dict.

    AUC ranks epochs; validation BCE breaks ties (e.g. once AUC saturates at 1).
    An undefined AUC counts as 0.
    """
    ids = np.asarray(ids, dtype=np.int64)
    ids = ids[graph.labels[ids] != UNLABELED]
    if ids.size == 0:
        return (0.0, 0.0), {}
    probs, logits = [], []
    p = {k: ad.constant(v) for k, v in params.as_dict().items()}
    for i in range(0, ids.size, batch_size):
        z = forward_tensors(graph, ids[i:i + batch_size], p, model_config,
                            visible_labels=visible).value[:, 0]
        logits.append(z)
    z = np.concatenate(logits)
    y = graph.labels[ids]
    bce = float(np.mean(np.logaddexp(0.0, z) - y * z))
    try:
        metrics = evaluate(ad._sigmoid(z), y).to_dict()
    except UndefinedMetric:
        metrics = {}
    metrics["bce"] = bce
    return (metrics.get("auc", 0.0), -bce), metrics


def train(graph, split, model_config, train_config, init_params=None):
    """Fit parameters; returns the best-validation parameters and a report."""
    model_config = model_config.validate()
    tc = train_config.validate()
    split.validate(graph)
    train_ids = np.asarray(split.train_ids)
    train_ids = train_ids[graph.labels[train_ids] != UNLABELED]
    if train_ids.size == 0:
        raise InvalidSplit("no labeled training nodes")
    if tc.standardize:
        graph = graph.standardized()
    visible = visible_labels(graph, train_ids)
    params = init_params.copy() if init_params is not None else \
        CatGnnParams.init(graph.feature_dim, model_config, tc.seed)
    params.check(model_config)
    rng = np.random.default_rng(tc.seed)
    state = None
    current = params.as_dict()
    best = params.copy()
    report = TrainReport(config={"model": model_config.to_dict(), "train": tc.to_dict()})
    stale = 0
    best_key = None

    for epoch in range(tc.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(train_ids)
        total, count = 0.0, 0
        for k in range(0, order.size, tc.batch_size):
            batch = np.sort(order[k:k + tc.batch_size])
            tape = ad.ExecutionTape()
            p = {name: tape.watch(v, name) for name, v in current.items()}
            step_seed = int(rng.integers(2**31))
            try:
                loss = batch_loss(graph, batch, p, model_config, tc.weight_decay, visible,
                                  training=True, seed=step_seed)
            except NumericsError as exc:
                raise NumericsError(f"epoch {epoch} batch {k // tc.batch_size}: {exc}") from None
            grads = ad.backward(tape, loss)
            current, state = adam_step(current, grads, state, tc.learning_rate,
                                       (tc.beta1, tc.beta2), tc.eps)
            total += float(loss.value[0, 0]) * batch.size
            count += batch.size
            report.steps += 1
        report.train_loss.append(total / count)

        snapshot = CatGnnParams.from_dict(current)
        score, vm = _validation_score(graph, split.valid_ids, snapshot, model_config, visible,
                                      tc.eval_batch_size)
        report.valid_metrics.append(vm)
        report.epoch_seconds.append(time.perf_counter() - t0)
        log.debug("epoch %d loss %.5f valid auc %.5f bce %.5f", epoch, report.train_loss[-1],
                  score[0], -score[1])
        if best_key is None or score > best_key:
            best_key, best = score, snapshot
            report.best_score, report.best_epoch = score[0], epoch
            stale = 0
        else:
            stale += 1
            if stale >= tc.early_stop_patience:
                report.stopped_early = True
                break

    res = evaluate_ids(graph, split.test_ids, best, model_config, visible, tc.eval_batch_size)
    report.test_metrics = None if res is None else res.to_dict()
    return best, report


def predict_split(graph, split, params, model_config, train_config, ids):
    """Probabilities for ``ids`` under the same preprocessing and label visibility as training."""
    if train_config.standardize:
        graph = graph.standardized()
    visible = visible_labels(graph, split.train_ids)
    return predict_proba(graph, ids, params, model_config, visible, train_config.eval_batch_size)
