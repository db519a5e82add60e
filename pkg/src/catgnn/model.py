"""Causal temporal graph attention network: parameters, forward pass, checkpoints."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .causal import Variant, intervene
from .errors import EmptyNeighborhood, InvalidInput, ShapeError
from .graph import UNLABELED

UNLABELED_ROW = 2
CHECKPOINT_FORMAT = "catgnn-params"
CHECKPOINT_VERSION = 1
PARAM_NAMES = ("projection_w", "projection_b", "label_embed", "attn", "mixup_w",
               "mixup_b", "output_proj", "classifier_w", "classifier_b")


@dataclass(frozen=True)
class ModelConfig:
    hidden_dim: int = 256
    num_heads: int = 4
    dropout: float = 0.2
    leaky_slope: float = 0.2
    variant: Variant = Variant.PL
    r_e: float = 0.3
    r_c: float = 0.5
    fixed_env_count: int = 2
    env_rounding: str = "floor"
    num_layers: int = 1
    intervene_at_eval: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))

    def validate(self):
        if self.hidden_dim < 1 or self.num_heads < 1:
            raise InvalidInput("hidden_dim and num_heads must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidInput(f"dropout {self.dropout} outside [0, 1)")
        if not 0.0 <= self.r_e <= 1.0:
            raise InvalidInput(f"r_e {self.r_e} outside [0, 1]")
        if not 0.0 < self.r_c <= 1.0:
            raise InvalidInput(f"r_c {self.r_c} outside (0, 1]")
        if self.fixed_env_count < 0:
            raise InvalidInput("fixed_env_count must be >= 0")
        if self.env_rounding not in ("floor", "ceil"):
            raise InvalidInput(f"env_rounding {self.env_rounding!r}")
        if self.num_layers != 1:
            raise InvalidInput("only a single attention layer is supported")
        return self

    def to_dict(self):
        d = asdict(self)
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def with_variant(self, variant, **changes):
        return replace(self, variant=Variant(variant), **changes)


def param_shapes(feature_dim, config):
    d, h = config.hidden_dim, config.num_heads
    return {
        "projection_w": (feature_dim, d),
        "projection_b": (1, d),
        "label_embed": (3, d),
        "attn": (2 * d, h),
        "mixup_w": (d, 1),
        "mixup_b": (1, 1),
        "output_proj": (h * d, d),
        "classifier_w": (d, 1),
        "classifier_b": (1, 1),
    }


@dataclass
class CatGnnParams:
    """All trainable arrays. Rows of ``label_embed``: benign, fraud, unlabeled."""

    projection_w: np.ndarray
    projection_b: np.ndarray
    label_embed: np.ndarray
    attn: np.ndarray
    mixup_w: np.ndarray
    mixup_b: np.ndarray
    output_proj: np.ndarray
    classifier_w: np.ndarray
    classifier_b: np.ndarray

    @classmethod
    def init(cls, feature_dim, config, seed=0):
        rng = np.random.default_rng(seed)
        arrays = {}
        for name, shape in param_shapes(feature_dim, config).items():
            if name.endswith("_b") or name == "mixup_w":
                arrays[name] = np.zeros(shape)
            else:
                limit = np.sqrt(6.0 / (shape[0] + shape[1]))
                arrays[name] = rng.uniform(-limit, limit, size=shape)
        return cls(**arrays)

    def as_dict(self):
        return {name: getattr(self, name) for name in PARAM_NAMES}

    @classmethod
    def from_dict(cls, d):
        return cls(**{name: np.array(d[name], dtype=np.float64) for name in PARAM_NAMES})

    def copy(self):
        return CatGnnParams.from_dict(self.as_dict())

    @property
    def num_parameters(self):
        return int(sum(v.size for v in self.as_dict().values()))

    @property
    def feature_dim(self):
        return self.projection_w.shape[0]

    def check(self, config):
        expected = param_shapes(self.feature_dim, config)
        for name, arr in self.as_dict().items():
            if arr.shape != expected[name]:
                raise ShapeError(f"{name}: shape {arr.shape}, config expects {expected[name]}")
            if not np.all(np.isfinite(arr)):
                raise InvalidInput(f"{name} has non-finite entries")
        return self


def save_params(path, params, config):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": config.to_dict(),
        "feature_dim": params.feature_dim,
        "params": {name: {"shape": list(arr.shape), "values": arr.ravel().tolist()}
                   for name, arr in params.as_dict().items()},
    }
    Path(path).write_text(json.dumps(doc))


def load_params(path, config=None):
    """Read a checkpoint; shapes are validated against ``config`` (or the stored one)."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise InvalidInput(f"{path}: not a version {CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} file")
    config = config or ModelConfig.from_dict(doc["model_config"])
    arrays = {}
    for name in PARAM_NAMES:
        entry = doc["params"][name]
        arrays[name] = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
    return CatGnnParams(**arrays).check(config), config


# ------------------------------------------------------------------ single-node pieces

def label_rows(labels):
    labels = np.asarray(labels)
    return np.where(labels == UNLABELED, UNLABELED_ROW, labels).astype(np.intp)


def _tensors(params):
    return {k: ad.constant(v) for k, v in params.as_dict().items()} if isinstance(params, CatGnnParams) else params


def embed_node(graph, node_id, params, mask_self=True, visible_labels=None,
               training=False, dropout=0.0, seed=None):
    """Projected features plus the label embedding (unlabeled row when masked)."""
    if not 0 <= node_id < graph.num_nodes:
        raise IndexError(f"node {node_id} outside [0, {graph.num_nodes})")
    p = _tensors(params)
    labels = graph.labels if visible_labels is None else visible_labels
    row = UNLABELED_ROW if mask_self else int(label_rows(labels[node_id:node_id + 1])[0])
    x = ad.dropout(ad.constant(graph.features[node_id:node_id + 1]), dropout, seed, training)
    base = ad.add(ad.matmul(x, p["projection_w"]), p["projection_b"])
    return ad.add(base, ad.gather_rows(p["label_embed"], [row]))


def attention_scores(center_emb, neighbor_embs, head, params, slope=0.2):
    """Softmax over neighbors of LeakyReLU(a_h . [center || neighbor]) for one head."""
    p = _tensors(params)
    neighbor_embs = ad._as_tensor(neighbor_embs)
    m = neighbor_embs.shape[0]
    if m == 0:
        raise EmptyNeighborhood("attention over zero neighbors")
    n_heads = p["attn"].shape[1]
    pick = np.zeros((n_heads, 1))
    pick[head, 0] = 1.0
    pair = ad.concat_cols(ad.gather_rows(center_emb, np.zeros(m, dtype=np.intp)), neighbor_embs)
    scores = ad.leaky_relu(ad.matmul(pair, ad.matmul(p["attn"], pick)), slope)
    return ad.segment_softmax(scores, np.zeros(m, dtype=np.intp))


def aggregate_neighborhood(per_head_weights, features, params):
    """ELU of each head's weighted neighbor sum, heads concatenated, times W_c."""
    p = _tensors(params)
    w = ad._as_tensor(per_head_weights)
    x = ad._as_tensor(features)
    n_heads = p["attn"].shape[1]
    if w.shape != (x.shape[0], n_heads):
        raise ShapeError(f"weights {w.shape} do not align with {x.shape[0]} neighbors x {n_heads} heads")
    if x.shape[0] == 0:
        return ad.constant(np.zeros((1, p["output_proj"].shape[1])))
    h = ad.elu(ad.weighted_segment_sum(w, x, np.zeros(x.shape[0], dtype=np.intp), 1))
    return ad.matmul(h, p["output_proj"])


# ------------------------------------------------------------------ batched forward

def batch_neighborhoods(adj, batch):
    """(segment, neighbor id) arrays for ``batch`` centers, grouped by center position."""
    starts = adj.indptr[batch]
    counts = adj.indptr[np.asarray(batch) + 1] - starts
    seg = np.repeat(np.arange(len(batch)), counts)
    offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    return seg, adj.indices[np.repeat(starts, counts) + offs]


def forward_tensors(graph, batch, p, config, training=False, seed=0, visible_labels=None,
                    trace=None):
    """Logits (B x 1) for ``batch`` with parameters ``p`` given as named tensors.

    Center nodes see their own label as unlabeled; neighbors see
    ``visible_labels`` (default: the graph's labels). Each relation's
    neighborhood is aggregated separately and the results are summed before
    the output projection; the center's own embedding is added back as a
    residual, so a node with no neighbors is scored from itself alone.
    """
    batch = np.asarray(batch, dtype=np.int64)
    if batch.size == 0:
        raise InvalidInput("empty batch")
    labels = graph.labels if visible_labels is None else np.asarray(visible_labels)
    d, n_heads, b = config.hidden_dim, config.num_heads, batch.size
    hoods = [batch_neighborhoods(adj, batch) for adj in graph.relations]
    nodes = np.unique(np.concatenate([batch] + [nb for _, nb in hoods]))

    x = ad.dropout(ad.constant(graph.features[nodes]), config.dropout, seed, training)
    base = ad.add(ad.matmul(x, p["projection_w"]), p["projection_b"])
    nbr_emb = ad.add(base, ad.gather_rows(p["label_embed"], label_rows(labels[nodes])))
    center_emb = ad.add(ad.gather_rows(base, np.searchsorted(nodes, batch)),
                        ad.gather_rows(p["label_embed"], np.full(b, UNLABELED_ROW)))

    s_center = ad.matmul(center_emb, ad.slice_rows(p["attn"], 0, d))
    s_nbr = ad.matmul(nbr_emb, ad.slice_rows(p["attn"], d, 2 * d))
    variant = config.variant if training or config.intervene_at_eval else Variant.N_CAT
    mix_scores = None
    if variant.mixes and variant.weight_mode == "learned":
        mix_scores = ad.add(ad.matmul(nbr_emb, p["mixup_w"]), p["mixup_b"])
    hidden = None
    for r, (seg, nbr) in enumerate(hoods):
        if seg.size == 0:
            continue
        pos = np.searchsorted(nodes, nbr)
        scores = ad.leaky_relu(ad.add(ad.gather_rows(s_center, seg), ad.gather_rows(s_nbr, pos)),
                               config.leaky_slope)
        alpha = ad.segment_softmax(scores, seg)
        iv = intervene(variant, alpha, ad.gather_rows(nbr_emb, pos), seg, nbr, p, config,
                       None if mix_scores is None else (mix_scores, pos))
        if trace is not None:
            trace.append({"relation": r, "segments": seg, "neighbors": nbr,
                          "alpha": alpha.value, "env_mask": iv.env_mask})
        if iv.segments.size == 0:
            continue
        agg = ad.elu(ad.weighted_segment_sum(iv.weights, iv.values, iv.segments, b))
        hidden = agg if hidden is None else ad.add(hidden, agg)

    z = center_emb
    if hidden is not None:
        z = ad.add(ad.matmul(hidden, p["output_proj"]), center_emb)
    return ad.add(ad.matmul(z, p["classifier_w"]), p["classifier_b"])


def forward(graph, batch, params, config, mode="eval", seed=0, visible_labels=None):
    """Logit per batch node as a 1-D array; ``mode`` is "train" or "eval"."""
    if mode not in ("train", "eval"):
        raise InvalidInput(f"mode must be 'train' or 'eval', got {mode!r}")
    out = forward_tensors(graph, batch, _tensors(params), config, training=(mode == "train"),
                          seed=seed, visible_labels=visible_labels)
    return out.value[:, 0]


def predict_proba(graph, ids, params, config, visible_labels=None, batch_size=1024):
    ids = np.asarray(ids, dtype=np.int64)
    p = _tensors(params)
    out = []
    for i in range(0, ids.size, batch_size):
        logits = forward_tensors(graph, ids[i:i + batch_size], p, config,
                                 visible_labels=visible_labels).value[:, 0]
        out.append(ad._sigmoid(logits))
    return np.concatenate(out) if out else np.zeros(0)
