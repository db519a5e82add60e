"""Causal inspection (importance, environment/causal partition) and causal mixup.

Per-neighborhood functions (:func:`node_importance`, :func:`partition_neighborhood`,
:func:`plan_mixup`, :func:`causal_mixup`, :func:`apply_variant`) work on plain
arrays for one center node. :func:`intervene` is the batched, tape-recorded
version used by the model's forward pass.

Mixup never writes to the stored neighbor embeddings; every center node gets
its own mixed copies, so interventions for different centers cannot observe
each other.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import EmptyNeighborhood, InvalidInput, NoCausalNodes, ShapeError

_EPS = 1e-9


class Variant(str, enum.Enum):
    PL = "PL"        # proportional environment set, learned mixup weights
    PI = "PI"        # proportional, importance weights
    FL = "FL"        # fixed-count environment set, learned weights
    FI = "FI"        # fixed-count, importance weights
    N_CAT = "N_CAT"  # no intervention
    D_CAT = "D_CAT"  # drop environment neighbors

    @property
    def selection(self):
        return "fixed" if self in (Variant.FL, Variant.FI) else "proportion"

    @property
    def weight_mode(self):
        return "importance" if self in (Variant.PI, Variant.FI) else "learned"

    @property
    def mixes(self):
        return self in (Variant.PL, Variant.PI, Variant.FL, Variant.FI)


@dataclass(frozen=True, eq=False)
class NeighborhoodPartition:
    center: int
    importance: np.ndarray
    env_set: np.ndarray      # positions in the neighbor list
    causal_set: np.ndarray
    neighbor_ids: np.ndarray


@dataclass(frozen=True, eq=False)
class MixupPlan:
    env: int                 # position of the environment neighbor
    causal: np.ndarray       # positions of the selected causal neighbors
    weights: np.ndarray      # [a_env, a_1, ..., a_k]

    @property
    def participants(self):
        return np.r_[self.env, self.causal].astype(np.int64)


def node_importance(head_weights):
    """Mean attention over heads, renormalized over the neighborhood."""
    hw = np.atleast_2d(np.asarray(head_weights, dtype=np.float64))
    if hw.shape[1] == 0:
        raise EmptyNeighborhood("no neighbors")
    mean = hw.mean(axis=0)
    return mean / mean.sum()


def env_count(m, r_e=None, fixed_count=None, rounding="floor"):
    """Number of environment neighbors among ``m``."""
    if fixed_count is not None:
        if fixed_count < 0:
            raise InvalidInput(f"fixed environment count {fixed_count} < 0")
        return min(int(fixed_count), m)
    if r_e is None or not 0.0 <= r_e <= 1.0:
        raise InvalidInput(f"environment ratio {r_e} outside [0, 1]")
    if rounding == "floor":
        return int(math.floor(r_e * m + _EPS))
    if rounding == "ceil":
        return int(math.ceil(r_e * m - _EPS))
    raise InvalidInput(f"unknown rounding {rounding!r}")


def causal_count(n_causal, r_c):
    if not 0.0 < r_c <= 1.0:
        raise InvalidInput(f"causal ratio {r_c} outside (0, 1]")
    if n_causal == 0:
        return 0
    return max(1, int(math.floor(r_c * n_causal + _EPS)))


def partition_neighborhood(importance, r_e=None, fixed_count=None, neighbor_ids=None,
                           rounding="floor", center=-1):
    """Lowest-importance neighbors form the environment set; ties go to lower ids."""
    imp = np.asarray(importance, dtype=np.float64)
    m = imp.size
    ids = np.arange(m) if neighbor_ids is None else np.asarray(neighbor_ids, dtype=np.int64)
    if ids.shape != imp.shape:
        raise ShapeError("one id per importance entry")
    k = env_count(m, r_e, fixed_count, rounding)
    order = np.lexsort((ids, imp))
    return NeighborhoodPartition(center, imp, np.sort(order[:k]), np.sort(order[k:]), ids)


def select_causal(partition, r_c):
    """Top-importance positions of the causal set (ties go to lower ids)."""
    c = partition.causal_set
    k = causal_count(c.size, r_c)
    order = np.lexsort((partition.neighbor_ids[c], -partition.importance[c]))
    return c[order[:k]]


def plan_mixup(partition, j, weight_mode, r_c, embeddings=None, scorer=None):
    """Choose causal partners for environment neighbor ``j`` and their weights.

    ``weight_mode="learned"`` softmaxes ``emb @ w + b`` over the participants,
    with ``scorer=(w, b)``; ``"importance"`` normalizes their importances.
    """
    if j not in partition.env_set:
        raise InvalidInput(f"position {j} is not an environment neighbor")
    if partition.causal_set.size == 0:
        raise NoCausalNodes(f"center {partition.center} has no causal neighbors")
    chosen = select_causal(partition, r_c)
    part = np.r_[j, chosen].astype(np.int64)
    if weight_mode == "importance":
        w = partition.importance[part]
        w = w / w.sum()
    elif weight_mode == "learned":
        if embeddings is None or scorer is None:
            raise InvalidInput("learned weights need embeddings and a scorer")
        wv, b = scorer
        s = np.asarray(embeddings, dtype=np.float64)[part] @ np.ravel(wv) + float(np.ravel(b)[0])
        e = np.exp(s - s.max())
        w = e / e.sum()
    else:
        raise InvalidInput(f"unknown weight mode {weight_mode!r}")
    return MixupPlan(int(j), chosen, w)


def causal_mixup(plan, embeddings):
    """Convex combination of the participants' embeddings, as a new array."""
    emb = np.asarray(embeddings, dtype=np.float64)
    return plan.weights @ emb[plan.participants]


def apply_variant(variant, partition, embeddings, head_weights, r_c=0.5, scorer=None):
    """Intervened neighbor features and the attention weights that go with them.

    Returns ``(features, head_weights, kept_positions)``. D_CAT drops the
    environment neighbors and renormalizes each head over the rest; every other
    variant keeps all neighbors and the original weights.
    """
    variant = Variant(variant)
    emb = np.asarray(embeddings, dtype=np.float64)
    hw = np.atleast_2d(np.asarray(head_weights, dtype=np.float64))
    m = emb.shape[0]
    if variant is Variant.D_CAT:
        kept = partition.causal_set
        w = hw[:, kept]
        tot = w.sum(axis=1, keepdims=True)
        return emb[kept].copy(), w / np.where(tot == 0, 1.0, tot), kept
    out = emb.copy()
    if variant.mixes and partition.causal_set.size:
        for j in partition.env_set:
            plan = plan_mixup(partition, j, variant.weight_mode, r_c, emb, scorer)
            out[j] = causal_mixup(plan, emb)
    return out, hw.copy(), np.arange(m)


# ------------------------------------------------------------------ batched

@dataclass
class Intervention:
    weights: ad.Tensor       # E' x H aggregation weights
    values: ad.Tensor        # E' x d neighbor features
    segments: np.ndarray     # E' center positions (sorted)
    env_mask: np.ndarray     # E, environment flags over the original edges


def _segment_layout(seg):
    first = np.flatnonzero(np.r_[True, seg[1:] != seg[:-1]])
    counts = np.diff(np.r_[first, seg.size])
    local = np.repeat(np.arange(first.size), counts)
    return first, counts, local


def _ascending_order(importance, seg, nbr):
    """Edges by (segment, importance, node id); ``seg`` is sorted."""
    if np.all((seg[1:] != seg[:-1]) | (nbr[1:] > nbr[:-1])):
        # ids already ascend within segments, so two stable sorts suffice
        o = np.argsort(importance, kind="stable")
        return o[np.argsort(seg[o], kind="stable")]
    return np.lexsort((nbr, importance, seg))


def batched_partition(importance, seg, nbr, config):
    """Environment flags for every edge of a batch of sorted neighborhoods."""
    first, counts, local = _segment_layout(seg)
    if config.variant.selection == "fixed":
        n_env = np.minimum(counts, config.fixed_env_count)
    elif config.env_rounding == "floor":
        n_env = np.floor(config.r_e * counts + _EPS).astype(np.int64)
    else:
        n_env = np.ceil(config.r_e * counts - _EPS).astype(np.int64)
    order = _ascending_order(importance, seg, nbr)
    rank = np.empty(seg.size, dtype=np.int64)
    rank[order] = np.arange(seg.size) - first[local[order]]
    return rank < n_env[local], first, counts, local, order


def _causal_order(order, imp, env, seg, nbr, first, counts, local):
    """Edges by segment, causal first by importance desc then id asc.

    Environment edges follow the causal ones in each segment, in no set order.

    Reversing the ascending partition order within each segment gives this
    (environment edges were the lowest, so they land last) except where
    causal importances tie; those batches take the full sort.
    """
    ends = np.repeat(first + counts - 1, counts)
    rev = order[ends + first[local] - np.arange(order.size)]
    c = rev[~env[rev]]
    if np.any((seg[c[1:]] == seg[c[:-1]]) & (imp[c[1:]] == imp[c[:-1]])):
        return np.lexsort((nbr, -imp, env, seg))
    return rev


def intervene(variant, alpha, x_edges, seg, nbr, params, config, score_rows=None):
    """Causal inspection and intervention over all neighborhoods of one relation.

    ``alpha`` (E x H) holds per-head attention, ``x_edges`` (E x d) the neighbor
    embeddings, ``seg`` the center position of each edge and ``nbr`` its node
    id. Because aggregation is linear in the neighbor features, each mixed
    copy is folded into the aggregation weights: the environment neighbor's
    weight is spread over its participants in proportion to the mixup weights.
    This equals aggregating the explicit mixed copies, without materializing
    one d-vector per (center, environment neighbor) pair.

    ``score_rows=(scores, rows)`` supplies learned mixup scores per node, with
    ``rows`` mapping each edge to its row; otherwise ``x_edges`` is scored.
    """
    variant = Variant(variant)
    n_edges, n_heads = alpha.shape
    no_env = np.zeros(n_edges, dtype=bool)
    if variant is Variant.N_CAT:
        return Intervention(alpha, x_edges, seg, no_env)

    mean = ad.matmul(alpha, np.full((n_heads, 1), 1.0 / n_heads))
    imp_t = ad.segment_normalize(mean, seg)
    imp = imp_t.value[:, 0]
    env, first, counts, local, asc = batched_partition(imp, seg, nbr, config)

    if variant is Variant.D_CAT:
        kept = np.flatnonzero(~env)
        if kept.size == 0:
            return Intervention(None, None, seg[:0], env)
        w = ad.segment_normalize(ad.gather_rows(alpha, kept), seg[kept])
        return Intervention(w, ad.gather_rows(x_edges, kept), seg[kept], env)

    n_env = np.bincount(local, weights=env, minlength=counts.size).astype(np.int64)
    n_causal = counts - n_env
    k = np.where(n_causal > 0,
                 np.maximum(1, np.floor(config.r_c * n_causal + _EPS).astype(np.int64)), 0)
    mixed = env & (k[local] > 0)
    if not mixed.any():
        return Intervention(alpha, x_edges, seg, env)

    # causal edges first within each segment, by importance desc then node id
    order = _causal_order(asc, imp, env, seg, nbr, first, counts, local)
    rank = np.empty(n_edges, dtype=np.int64)
    rank[order] = np.arange(n_edges) - first[local[order]]
    chosen = order[(~env[order]) & (rank[order] < k[local[order]])]
    chosen_first = np.zeros(counts.size, dtype=np.int64)
    np.cumsum(k[:-1], out=chosen_first[1:])

    owners = np.flatnonzero(mixed)
    reps = k[local[owners]]
    groups = np.arange(owners.size)
    extra_group = np.repeat(groups, reps)
    offset = np.arange(reps.sum()) - np.repeat(np.cumsum(reps) - reps, reps)
    extra = chosen[np.repeat(chosen_first[local[owners]], reps) + offset]
    # one block per owner: the environment edge, then its causal participants
    block = np.cumsum(reps + 1) - (reps + 1)
    target = np.empty(owners.size + extra.size, dtype=np.int64)
    target[block] = owners
    target[block[extra_group] + 1 + offset] = extra
    group = np.repeat(groups, reps + 1)

    if variant.weight_mode == "learned":
        if score_rows is None:
            scores = ad.add(ad.matmul(x_edges, params["mixup_w"]), params["mixup_b"])
            a = ad.segment_softmax(ad.gather_rows(scores, target), group)
        else:
            scores, rows = score_rows
            a = ad.segment_softmax(ad.gather_rows(scores, rows[target]), group)
    else:
        a = ad.segment_normalize(ad.gather_rows(imp_t, target), group)

    keep = ad.mul(alpha, (~mixed).astype(np.float64)[:, None])
    spread = ad.mul(ad.gather_rows(alpha, owners[group]), a)
    w = ad.add(keep, ad.index_add(spread, target, n_edges))
    return Intervention(w, x_edges, seg, env)
