import os

import numpy as np
import pytest

from catgnn.graph import Adjacency, DatasetSplit, MultiRelationGraph, UNLABELED
from catgnn.model import CatGnnParams, ModelConfig


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow") or os.environ.get("CATGNN_SLOW"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def make_small_graph(seed, n=12, feature_dim=5, num_relations=2, edge_prob=0.3):
    """Random symmetric multi-relation graph with 3 fraud and 3 unlabeled nodes."""
    rng = np.random.default_rng(seed)
    labels = np.zeros(n, dtype=np.int64)
    labels[:3] = 1
    labels = rng.permutation(labels)
    labels[rng.choice(n, 3, replace=False)] = UNLABELED
    feats = rng.normal(size=(n, feature_dim)) + 0.8 * (labels == 1)[:, None]
    rels = []
    for _ in range(num_relations):
        a = np.triu(rng.random((n, n)) < edge_prob, 1)
        src, dst = np.nonzero(a)
        rels.append(Adjacency.from_edges(n, src, dst, symmetric=True))
    graph = MultiRelationGraph(feats, labels, tuple(rels))
    labeled = np.flatnonzero(labels != UNLABELED)
    split = DatasetSplit(labeled[:5], labeled[5:7], np.r_[labeled[7:], np.flatnonzero(labels == UNLABELED)])
    return graph.standardized(), split


@pytest.fixture
def small_graph():
    """12 nodes, 2 relations, a few unlabeled nodes."""
    return make_small_graph(7)


@pytest.fixture
def tiny_config():
    return ModelConfig(hidden_dim=4, num_heads=2, dropout=0.0, r_e=0.4)


@pytest.fixture
def tiny_params(small_graph, tiny_config):
    return CatGnnParams.init(small_graph[0].feature_dim, tiny_config, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ------------------------------------------------------------------ acceptance gate

GATE_LINES = []


@pytest.fixture
def gate(capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    def report(number, name, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number} ({name}): {detail}"
        GATE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if GATE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in GATE_LINES:
            terminalreporter.write_line(line)
