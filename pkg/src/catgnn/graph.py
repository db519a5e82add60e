"""Multi-relation transaction graphs: data model, construction, loading, synthesis."""
from __future__ import annotations

import csv
import enum
import zlib
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import DuplicateId, InvalidInput, ParseError, SchemaError

UNLABELED = -1
HASH_WIDTH = 32


class Label(enum.IntEnum):
    BENIGN = 0
    FRAUD = 1
    UNLABELED = -1


@dataclass(frozen=True)
class TransactionRecord:
    txn_id: int
    time: int
    source: str
    target: str
    amount: float
    location: str
    txn_type: str
    label: int = UNLABELED


def _readonly(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Adjacency:
    """Compressed neighbor index: ``indices[indptr[i]:indptr[i+1]]`` are i's neighbors."""

    indptr: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "indptr", _readonly(np.asarray(self.indptr, dtype=np.int64)))
        object.__setattr__(self, "indices", _readonly(np.asarray(self.indices, dtype=np.int64)))

    @classmethod
    def from_edges(cls, num_nodes, src, dst, symmetric=False):
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        if symmetric:
            src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
        keep = src != dst
        src, dst = src[keep], dst[keep]
        if src.size:
            pairs = np.unique(src * num_nodes + dst)
            src, dst = pairs // num_nodes, pairs % num_nodes
        indptr = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=num_nodes), out=indptr[1:])
        return cls(indptr, dst)

    @classmethod
    def from_lists(cls, lists):
        indptr = np.zeros(len(lists) + 1, dtype=np.int64)
        np.cumsum([len(x) for x in lists], out=indptr[1:])
        flat = np.concatenate([np.asarray(x, dtype=np.int64) for x in lists]) if lists else []
        return cls(indptr, flat)

    @property
    def num_nodes(self):
        return len(self.indptr) - 1

    @property
    def nnz(self):
        return int(self.indptr[-1])

    def neighbors(self, i):
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def degrees(self):
        return np.diff(self.indptr)

    def to_lists(self):
        return [self.neighbors(i).tolist() for i in range(self.num_nodes)]

    def edges(self):
        src = np.repeat(np.arange(self.num_nodes), self.degrees())
        return src, self.indices.copy()

    def is_symmetric(self):
        src, dst = self.edges()
        a = np.sort(src * self.num_nodes + dst)
        b = np.sort(dst * self.num_nodes + src)
        return np.array_equal(a, b)

    def __eq__(self, other):
        return (isinstance(other, Adjacency) and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices))


@dataclass(frozen=True, eq=False)
class MultiRelationGraph:
    """Immutable node features, per-relation adjacency and a label vector.

    Labels are 0 (benign), 1 (fraud) or ``UNLABELED`` (-1).
    ``node_times`` is set for graphs built from transaction logs.
    """

    features: np.ndarray
    labels: np.ndarray
    relations: tuple
    relation_names: tuple = ()
    node_times: np.ndarray | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        rels = tuple(self.relations)
        names = tuple(self.relation_names) or tuple(f"rel{r}" for r in range(len(rels)))
        if feats.ndim != 2:
            raise InvalidInput(f"features must be 2-D, got {feats.shape}")
        n = feats.shape[0]
        if labels.shape != (n,):
            raise InvalidInput(f"{labels.shape[0]} labels for {n} nodes")
        if not np.isin(labels, (0, 1, UNLABELED)).all():
            raise InvalidInput("labels must be 0, 1 or UNLABELED")
        if not rels:
            raise InvalidInput("need at least one relation")
        if len(names) != len(rels):
            raise InvalidInput("one name per relation")
        for name, adj in zip(names, rels):
            if adj.num_nodes != n:
                raise InvalidInput(f"relation {name} covers {adj.num_nodes} nodes, expected {n}")
            if adj.nnz and (adj.indices.min() < 0 or adj.indices.max() >= n):
                raise InvalidInput(f"relation {name} has neighbor index outside [0, {n})")
            if adj.nnz > 1:
                inner = np.ones(adj.nnz - 1, dtype=bool)
                bounds = adj.indptr[1:-1]
                inner[bounds[(bounds > 0) & (bounds < adj.nnz)] - 1] = False
                if np.any(np.diff(adj.indices)[inner] <= 0):
                    raise InvalidInput(f"relation {name}: neighbor lists not sorted/unique")
        object.__setattr__(self, "features", _readonly(feats))
        object.__setattr__(self, "labels", _readonly(labels))
        object.__setattr__(self, "relations", rels)
        object.__setattr__(self, "relation_names", names)
        if self.node_times is not None:
            object.__setattr__(self, "node_times", _readonly(np.asarray(self.node_times, dtype=np.int64)))

    @property
    def num_nodes(self):
        return self.features.shape[0]

    @property
    def num_relations(self):
        return len(self.relations)

    @property
    def feature_dim(self):
        return self.features.shape[1]

    @property
    def num_edges(self):
        """Edge count summed over relations; undirected edges count once."""
        total = 0
        for adj in self.relations:
            total += adj.nnz // 2 if adj.is_symmetric() else adj.nnz
        return total

    def labeled_mask(self):
        return self.labels != UNLABELED

    def with_features(self, features):
        return MultiRelationGraph(features, self.labels, self.relations,
                                  self.relation_names, self.node_times)

    def standardized(self):
        """Copy with zero-mean, unit-variance feature columns (constant columns left at 0)."""
        f = self.features
        sd = f.std(axis=0)
        return self.with_features((f - f.mean(axis=0)) / np.where(sd > 0, sd, 1.0))

    def equals(self, other):
        return (np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels)
                and self.relations == other.relations)


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    train_ids: np.ndarray
    valid_ids: np.ndarray
    test_ids: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(self, f.name, _readonly(np.sort(np.asarray(getattr(self, f.name), dtype=np.int64))))

    def validate(self, graph):
        parts = (self.train_ids, self.valid_ids, self.test_ids)
        allids = np.concatenate(parts)
        if np.unique(allids).size != allids.size:
            raise InvalidInput("split parts overlap")
        if allids.size and (allids.min() < 0 or allids.max() >= graph.num_nodes):
            raise InvalidInput("split id outside graph")
        for part in parts[:2]:
            if np.any(graph.labels[part] == UNLABELED):
                raise InvalidInput("train/valid ids must be labeled")
        return self

    def sizes(self):
        return len(self.train_ids), len(self.valid_ids), len(self.test_ids)

    def to_dict(self):
        return {f.name: getattr(self, f.name).tolist() for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["train_ids"], d["valid_ids"], d["test_ids"])


# ------------------------------------------------------------------ splitting

def stratified_order(ids, labels, rng):
    """Shuffle each class, then interleave classes so every prefix is stratified."""
    ids = np.asarray(ids, dtype=np.int64)
    labels = np.asarray(labels)
    keys, classes, out = [], [], []
    for c in np.unique(labels):
        members = rng.permutation(ids[labels == c])
        out.append(members)
        keys.append((np.arange(members.size) + 0.5) / members.size)
        classes.append(np.full(members.size, c))
    if not out:
        return ids[:0]
    out, keys, classes = map(np.concatenate, (out, keys, classes))
    return out[np.lexsort((classes, keys))]


def _cut(ratio, n):
    return int(np.floor(ratio * n + 1e-9))


def split_labeled(labels, train_ratio, valid_ratio, test_ratio, seed=0, ids=None):
    """Stratified split of the labeled nodes.

    Boundaries are cumulative floors over the stratified order: test takes the
    tail ``n - floor((1 - test) n)``, valid the block before it, train a prefix
    of ``floor(train n)``. With ratios summing below one the gap is unused, so
    the test set is fixed while ``train_ratio`` varies.
    """
    for r in (train_ratio, valid_ratio, test_ratio):
        if not 0.0 <= r <= 1.0:
            raise InvalidInput(f"split ratio {r} outside [0, 1]")
    if train_ratio + valid_ratio + test_ratio > 1.0 + 1e-9:
        raise InvalidInput("split ratios sum above 1")
    labels = np.asarray(labels)
    if ids is None:
        ids = np.flatnonzero(labels != UNLABELED)
    ids = np.asarray(ids, dtype=np.int64)
    order = stratified_order(ids, labels[ids], np.random.default_rng(seed))
    n = order.size
    test_start = _cut(1.0 - test_ratio, n)
    valid_start = _cut(1.0 - test_ratio - valid_ratio, n)
    return DatasetSplit(order[:_cut(train_ratio, n)], order[valid_start:test_start], order[test_start:])


def temporal_split(graph, cut=0.7, valid_fraction=0.2, seed=0):
    """Labeled nodes before the time-quantile ``cut`` train/validate, the rest test."""
    if graph.node_times is None:
        raise InvalidInput("graph has no node times")
    if not 0.0 < cut < 1.0:
        raise InvalidInput(f"time cut {cut} outside (0, 1)")
    t = graph.node_times
    threshold = t.min() + cut * (t.max() - t.min())
    labeled = graph.labels != UNLABELED
    early = np.flatnonzero(labeled & (t <= threshold))
    late = np.flatnonzero(labeled & (t > threshold))
    order = stratified_order(early, graph.labels[early], np.random.default_rng(seed))
    k = order.size - _cut(valid_fraction, order.size)
    return DatasetSplit(order[:k], order[k:], late)


# ------------------------------------------------------------------ transactions

def _bucket(value, width):
    return zlib.crc32(str(value).encode("utf-8")) % width


def _check_records(records):
    if not records:
        raise InvalidInput("empty record list")
    seen = set()
    for r in records:
        if r.txn_id in seen:
            raise DuplicateId(f"duplicate txn_id {r.txn_id}")
        seen.add(r.txn_id)
        if r.amount < 0:
            raise InvalidInput(f"txn {r.txn_id}: negative amount")


def chronological(records):
    """Records sorted by (time, txn_id); node i of a temporal graph is the i-th of these."""
    return sorted(records, key=lambda r: (r.time, r.txn_id))


RELATION_KEYS = (("same_source", "source"), ("same_target", "target"), ("same_location", "location"))


def build_temporal_graph(records, window, max_neighbors, hash_width=HASH_WIDTH):
    """One node per transaction, linked to recent earlier transactions sharing a key.

    For each of source, target and location, transaction i links to at most
    ``max_neighbors`` of the latest earlier transactions with the same key whose
    time gap is ``<= window``. Edges point newer -> older only.
    """
    _check_records(records)
    if window <= 0:
        raise InvalidInput("window must be positive")
    if max_neighbors < 1:
        raise InvalidInput("max_neighbors must be >= 1")
    recs = chronological(records)
    n = len(recs)
    times = np.array([r.time for r in recs], dtype=np.int64)

    relations = []
    for _, attr in RELATION_KEYS:
        lists = [None] * n
        history = {}
        for i, r in enumerate(recs):
            prev = history.setdefault(getattr(r, attr), [])
            nb = []
            for j in reversed(prev):
                if times[i] - times[j] > window or len(nb) == max_neighbors:
                    break
                nb.append(j)
            lists[i] = sorted(nb)
            prev.append(i)
        relations.append(Adjacency.from_lists(lists))

    feats = np.zeros((n, 2 + 2 * hash_width))
    last_seen = {}
    for i, r in enumerate(recs):
        feats[i, 0] = r.amount
        feats[i, 1 + _bucket(r.txn_type, hash_width)] = 1.0
        feats[i, 1 + hash_width + _bucket(r.location, hash_width)] = 1.0
        if r.source in last_seen:
            feats[i, -1] = r.time - last_seen[r.source]
        last_seen[r.source] = r.time
    labels = np.array([r.label if r.label in (0, 1) else UNLABELED for r in recs])
    return MultiRelationGraph(feats, labels, tuple(relations),
                              tuple(name for name, _ in RELATION_KEYS), times)


@dataclass(frozen=True)
class ColumnMapping:
    """Header names for each record field; ``txn_id=None`` numbers rows from 0."""

    time: str = "time"
    source: str = "source"
    target: str = "target"
    amount: str = "amount"
    location: str = "location"
    type: str = "type"
    label: str = "label"
    txn_id: str | None = None


def _parse_label(text):
    try:
        v = float(text)
    except ValueError:
        return UNLABELED
    return int(v) if v in (0.0, 1.0) else UNLABELED


def load_transactions_csv(path, schema=None):
    """Parse a transaction CSV in file order. Error rows are file line numbers."""
    schema = schema or ColumnMapping()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = [schema.time, schema.source, schema.target, schema.amount,
                  schema.location, schema.type, schema.label]
        if schema.txn_id is not None:
            needed.append(schema.txn_id)
        for col in needed:
            if col not in header:
                raise SchemaError(col)
        records = []
        for k, row in enumerate(reader):
            line = k + 2
            try:
                t = float(row[schema.time])
                amount = float(row[schema.amount])
                txn = int(row[schema.txn_id]) if schema.txn_id is not None else k
            except (TypeError, ValueError) as exc:
                raise ParseError(str(exc), line) from None
            if not np.isfinite(t) or t != int(t):
                raise ParseError(f"time {row[schema.time]!r} is not an integer", line)
            if not np.isfinite(amount) or amount < 0:
                raise ParseError(f"amount {row[schema.amount]!r} must be finite and >= 0", line)
            records.append(TransactionRecord(
                txn_id=txn, time=int(t), source=row[schema.source], target=row[schema.target],
                amount=amount, location=row[schema.location], txn_type=row[schema.type],
                label=_parse_label(row[schema.label])))
    return records


# ------------------------------------------------------------------ generic graphs

def _numeric_rows(path, width=None):
    """Yield (line_no, floats) skipping a non-numeric header line."""
    with open(path, newline="", encoding="utf-8") as fh:
        for k, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            try:
                vals = [float(x) for x in row]
            except ValueError:
                if k == 0:
                    continue
                raise ParseError(f"{path}: non-numeric value", k + 1) from None
            if width is not None and len(vals) != width:
                raise ParseError(f"{path}: expected {width} columns, got {len(vals)}", k + 1)
            yield k + 1, vals


def load_generic_graph(feature_path, label_path, edge_paths, relation_names=None):
    """Load features (N x d CSV), labels (node_id,label) and one edge CSV per relation.

    Edges are symmetrized. Missing or non-{0,1} labels become ``UNLABELED``.
    """
    feats = np.array([v for _, v in _numeric_rows(feature_path)], dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise InvalidInput(f"{feature_path}: no feature rows")
    n = feats.shape[0]
    labels = np.full(n, UNLABELED, dtype=np.int64)
    for line, (node, lab) in _numeric_rows(label_path, 2):
        node = int(node)
        if not 0 <= node < n:
            raise IndexError(f"{label_path}:{line}: node {node} outside [0, {n})")
        labels[node] = int(lab) if lab in (0.0, 1.0) else UNLABELED
    relations = []
    for path in edge_paths:
        pairs = []
        for line, (s, d) in _numeric_rows(path, 2):
            s, d = int(s), int(d)
            if not (0 <= s < n and 0 <= d < n):
                raise IndexError(f"{path}:{line}: edge ({s}, {d}) outside [0, {n})")
            pairs.append((s, d))
        arr = np.array(pairs, dtype=np.int64).reshape(-1, 2)
        relations.append(Adjacency.from_edges(n, arr[:, 0], arr[:, 1], symmetric=True))
    names = relation_names or [Path(p).stem for p in edge_paths]
    return MultiRelationGraph(feats, labels, tuple(relations), tuple(names))


def save_generic_graph(graph, out_dir):
    """Write ``graph`` in the generic format; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fpath, lpath = out / "features.csv", out / "labels.csv"
    with open(fpath, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for row in graph.features:
            w.writerow([repr(float(x)) for x in row])
    with open(lpath, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "label"])
        w.writerows(enumerate(graph.labels.tolist()))
    epaths = []
    for name, adj in zip(graph.relation_names, graph.relations):
        p = out / f"{name}.csv"
        src, dst = adj.edges()
        keep = src < dst if adj.is_symmetric() else np.ones(src.size, dtype=bool)
        with open(p, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["src", "dst"])
            w.writerows(zip(src[keep].tolist(), dst[keep].tolist()))
        epaths.append(p)
    return {"features": fpath, "labels": lpath, "edges": epaths}


# ------------------------------------------------------------------ synthetic

@dataclass(frozen=True)
class SynthConfig:
    """Planted two-class graph with camouflage edges and a shifted test set.

    ``train_ratio``/``valid_ratio``/``test_ratio`` split the labeled nodes
    (those left after ``hidden_ratio`` of all nodes are made unlabeled).
    """

    num_nodes: int = 2000
    fraud_ratio: float = 0.1
    camouflage_ratio: float = 0.3
    hidden_ratio: float = 0.3
    feature_dim: int = 16
    num_relations: int = 2
    avg_degree: int = 8
    homophily_noise: float = 0.2
    class_sep: float = 0.3
    test_shift: float = 1.0
    train_ratio: float = 0.4
    valid_ratio: float = 0.2
    test_ratio: float = 0.4

    def validate(self):
        if self.num_nodes < 20:
            raise InvalidInput("num_nodes must be >= 20")
        if not 0.0 < self.fraud_ratio < 0.5:
            raise InvalidInput("fraud_ratio must be in (0, 0.5)")
        if not 0.0 <= self.camouflage_ratio <= 1.0:
            raise InvalidInput("camouflage_ratio must be in [0, 1]")
        if not 0.0 <= self.hidden_ratio < 1.0:
            raise InvalidInput("hidden_ratio must be in [0, 1)")
        if not 0.0 <= self.homophily_noise <= 1.0:
            raise InvalidInput("homophily_noise must be in [0, 1]")
        if self.feature_dim < 1 or self.num_relations < 1 or self.avg_degree < 2:
            raise InvalidInput("feature_dim, num_relations >= 1 and avg_degree >= 2 required")
        if self.train_ratio + self.valid_ratio + self.test_ratio > 1.0 + 1e-9:
            raise InvalidInput("split ratios sum above 1")
        n_fraud = int(round(self.fraud_ratio * self.num_nodes))
        if n_fraud < 1 or n_fraud >= self.num_nodes - 1:
            raise InvalidInput("degenerate class sizes")
        return self


def generate_synthetic(config, seed=0):
    """Planted benign/fraud graph; returns ``(graph, split)``, pure in (config, seed).

    Independent random streams drive roles, features, edges, hiding, splitting
    and the shift, so changing only the split ratios leaves the graph intact.
    """
    cfg = config.validate()
    roles_rng, feat_rng, edge_rng, hide_rng, shift_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(5))
    split_seed = int(np.random.SeedSequence(seed).spawn(6)[5].generate_state(1)[0])
    n = cfg.num_nodes
    n_fraud = int(round(cfg.fraud_ratio * n))
    truth = np.zeros(n, dtype=np.int64)
    truth[roles_rng.permutation(n)[:n_fraud]] = 1

    direction = feat_rng.standard_normal(cfg.feature_dim)
    direction /= np.linalg.norm(direction)
    feats = feat_rng.standard_normal((n, cfg.feature_dim)) + np.outer(truth, cfg.class_sep * direction)

    pools = (np.flatnonzero(truth == 0), np.flatnonzero(truth == 1))
    fraud = pools[1]
    draws = max(1, cfg.avg_degree // 2)
    relations = []
    for _ in range(cfg.num_relations):
        src = np.repeat(np.arange(n), draws)
        same = edge_rng.random(src.size) >= cfg.homophily_noise
        cls = np.where(same, truth[src], 1 - truth[src])
        u = edge_rng.random(src.size)
        dst = np.where(cls == 1,
                       pools[1][(u * pools[1].size).astype(np.int64)],
                       pools[0][(u * pools[0].size).astype(np.int64)])
        n_cam = edge_rng.binomial(cfg.avg_degree, cfg.camouflage_ratio, size=fraud.size)
        cam_src = np.repeat(fraud, n_cam)
        cam_dst = pools[0][edge_rng.integers(0, pools[0].size, size=cam_src.size)]
        relations.append(Adjacency.from_edges(
            n, np.concatenate([src, cam_src]), np.concatenate([dst, cam_dst]), symmetric=True))

    labels = truth.copy()
    labels[hide_rng.permutation(n)[:int(round(cfg.hidden_ratio * n))]] = UNLABELED
    split = split_labeled(labels, cfg.train_ratio, cfg.valid_ratio, cfg.test_ratio, seed=split_seed)

    shift_dir = shift_rng.standard_normal(cfg.feature_dim)
    shift_dir /= np.linalg.norm(shift_dir)
    feats[split.test_ids] += cfg.test_shift * shift_dir

    names = tuple(f"rel{r}" for r in range(cfg.num_relations))
    return MultiRelationGraph(feats, labels, tuple(relations), names), split
