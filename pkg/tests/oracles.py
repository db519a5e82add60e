"""Slow, loop-based reference implementations used as test oracles.

Nothing here imports the package's algorithms; only plain Python and numpy.
"""
import itertools
import math

import numpy as np

UNLABELED = -1


# ------------------------------------------------------------------ graph

def temporal_edges_bruteforce(records, window, max_neighbors):
    """All-pairs scan: per key, the latest earlier same-key records within the window."""
    recs = sorted(records, key=lambda r: (r.time, r.txn_id))
    out = []
    for attr in ("source", "target", "location"):
        lists = []
        for i, ri in enumerate(recs):
            cands = [j for j, rj in enumerate(recs)
                     if j < i and getattr(rj, attr) == getattr(ri, attr) and ri.time - rj.time <= window]
            cands.sort(key=lambda j: (recs[j].time, j), reverse=True)
            lists.append(sorted(cands[:max_neighbors]))
        out.append(lists)
    return out


# ------------------------------------------------------------------ metrics

def auc_pairs(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return total / (len(pos) * len(neg))


def f1_confusion(scores, labels, threshold=0.5):
    pred = [1 if s >= threshold else 0 for s in scores]

    def f1(c):
        tp = sum(1 for p, y in zip(pred, labels) if p == c and y == c)
        fp = sum(1 for p, y in zip(pred, labels) if p == c and y != c)
        fn = sum(1 for p, y in zip(pred, labels) if p != c and y == c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        return 2 * prec * rec / (prec + rec) if prec + rec else 0.0

    return (f1(1) + f1(0)) / 2


def ap_steps(scores, labels):
    """Walk the ranking (descending score, ties by input position) summing (R_i - R_{i-1}) P_i."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    n_pos = sum(labels)
    hits, prev_recall, total = 0, 0.0, 0.0
    for rank, i in enumerate(order, start=1):
        hits += labels[i]
        recall = hits / n_pos
        total += (recall - prev_recall) * hits / rank
        prev_recall = recall
    return total


def all_labelings(n):
    return itertools.product((0, 1), repeat=n)


# ------------------------------------------------------------------ model

def _leaky(v, slope):
    return v if v > 0 else slope * v


def _elu(v):
    return v if v > 0 else math.expm1(v)


def _softmax(vals):
    mx = max(vals)
    e = [math.exp(v - mx) for v in vals]
    s = sum(e)
    return [x / s for x in e]


def forward_reference(features, visible, neighbor_lists, params, cfg, batch):
    """Per-node straight-line forward pass.

    ``neighbor_lists[r][i]`` lists node i's neighbors in relation r. Mixed
    copies of environment neighbors are materialized explicitly.
    """
    P = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    d = P["projection_w"].shape[1]
    H = P["attn"].shape[1]
    variant = cfg["variant"]

    def emb(j, row):
        return features[j] @ P["projection_w"] + P["projection_b"][0] + P["label_embed"][row]

    def row_of(j):
        return 2 if visible[j] == UNLABELED else int(visible[j])

    logits = []
    for i in batch:
        e_i = emb(i, 2)
        total = np.zeros(H * d)
        touched = False
        for lists in neighbor_lists:
            nb = list(lists[i])
            if not nb:
                continue
            X = [emb(j, row_of(j)) for j in nb]
            m = len(nb)
            alpha = []
            for h in range(H):
                a_c, a_n = P["attn"][:d, h], P["attn"][d:, h]
                alpha.append(_softmax([_leaky(float(a_c @ e_i + a_n @ x), cfg["slope"]) for x in X]))
            mean = [sum(alpha[h][t] for h in range(H)) / H for t in range(m)]
            imp = [v / sum(mean) for v in mean]

            if variant == "N_CAT":
                n_env = 0
            elif variant in ("FL", "FI"):
                n_env = min(cfg["fixed"], m)
            else:
                n_env = int(math.floor(cfg["r_e"] * m + 1e-9))
            by_imp = sorted(range(m), key=lambda t: (imp[t], nb[t]))
            env, causal = by_imp[:n_env], by_imp[n_env:]

            weights = [list(a) for a in alpha]
            values = list(X)
            positions = list(range(m))
            if variant == "D_CAT":
                positions = sorted(causal)
                if not positions:
                    continue
                for h in range(H):
                    s = sum(alpha[h][t] for t in positions)
                    weights[h] = [alpha[h][t] / s if t in positions else 0.0 for t in range(m)]
            elif variant in ("PL", "PI", "FL", "FI") and causal:
                k = max(1, int(math.floor(cfg["r_c"] * len(causal) + 1e-9)))
                top = sorted(causal, key=lambda t: (-imp[t], nb[t]))[:k]
                for j in env:
                    parts = [j] + top
                    if variant in ("PL", "FL"):
                        a = _softmax([float(X[p] @ P["mixup_w"][:, 0] + P["mixup_b"][0, 0]) for p in parts])
                    else:
                        s = sum(imp[p] for p in parts)
                        a = [imp[p] / s for p in parts]
                    values[j] = sum(w * X[p] for w, p in zip(a, parts))

            heads = []
            for h in range(H):
                acc = sum(weights[h][t] * values[t] for t in positions)
                heads.append([_elu(v) for v in acc])
            total += np.concatenate(heads)
            touched = True
        z = e_i + (total @ P["output_proj"] if touched else 0.0)
        logits.append(float(z @ P["classifier_w"][:, 0] + P["classifier_b"][0, 0]))
    return np.array(logits)


def bce_l2_reference(logits, targets, params, eta):
    """-(1/B) sum(y log p + (1-y) log(1-p)) + eta * sum(theta^2), written out directly."""
    total = 0.0
    for z, y in zip(logits, targets):
        p = 1.0 / (1.0 + math.exp(-z))
        total += y * math.log(p) + (1 - y) * math.log(1 - p)
    reg = sum(float(np.sum(np.asarray(v) ** 2)) for v in params.values())
    return -total / len(logits) + eta * reg
