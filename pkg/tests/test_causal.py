import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from catgnn import autodiff as ad
from catgnn.causal import (Variant, apply_variant, causal_mixup, env_count, intervene,
                           node_importance, partition_neighborhood, plan_mixup)
from catgnn.errors import EmptyNeighborhood, InvalidInput, NoCausalNodes
from catgnn.model import ModelConfig


def test_variant_grid():
    assert Variant.PL.selection == "proportion" and Variant.PL.weight_mode == "learned"
    assert Variant.FI.selection == "fixed" and Variant.FI.weight_mode == "importance"
    assert not Variant.N_CAT.mixes and not Variant.D_CAT.mixes


def test_importance_examples():
    alpha = np.array([[0.1, 0.2, 0.7]])
    assert np.array_equal(node_importance(alpha), alpha[0] / alpha[0].sum())
    assert node_importance([[0.6, 0.4], [0.2, 0.8]]) == pytest.approx([0.4, 0.6], abs=1e-15)
    assert node_importance(np.full((3, 5), 0.2)) == pytest.approx(np.full(5, 0.2), abs=1e-15)
    with pytest.raises(EmptyNeighborhood):
        node_importance(np.zeros((2, 0)))


def test_partition_examples():
    p = partition_neighborhood([0.4, 0.3, 0.2, 0.1], r_e=0.5)
    assert p.env_set.tolist() == [2, 3] and p.causal_set.tolist() == [0, 1]
    p = partition_neighborhood([0.4, 0.3, 0.2, 0.1], r_e=0.0)
    assert p.env_set.size == 0 and p.causal_set.tolist() == [0, 1, 2, 3]
    p = partition_neighborhood(np.full(4, 0.25), r_e=0.25, neighbor_ids=[9, 4, 7, 5])
    assert p.neighbor_ids[p.env_set].tolist() == [4]


def test_partition_rounding_and_fixed_count():
    assert env_count(5, r_e=0.3) == 1
    assert env_count(5, r_e=0.3, rounding="ceil") == 2
    assert env_count(10, r_e=0.3) == 3  # 0.3 * 10 is 2.9999999999999996 in floats
    assert env_count(3, fixed_count=2) == 2 and env_count(1, fixed_count=2) == 1
    with pytest.raises(InvalidInput):
        env_count(4, r_e=1.5)


def test_importance_mixup_weights():
    p = partition_neighborhood([0.4, 0.3, 0.2, 0.1], r_e=0.25)
    plan = plan_mixup(p, 3, "importance", r_c=0.3)
    assert plan.causal.tolist() == [0]
    assert plan.weights == pytest.approx([0.2, 0.8], abs=1e-15)


def test_learned_weights_uniform_for_identical_embeddings():
    p = partition_neighborhood([0.1, 0.2, 0.3, 0.4], r_e=0.25)
    emb = np.tile([0.3, -1.0], (4, 1))
    plan = plan_mixup(p, 0, "learned", r_c=1.0, embeddings=emb, scorer=(np.array([1.0, 2.0]), 0.5))
    assert plan.weights == pytest.approx(np.full(4, 0.25), abs=1e-15)


def test_full_causal_ratio_selects_all():
    p = partition_neighborhood([0.1, 0.3, 0.25, 0.35], r_e=0.25)
    plan = plan_mixup(p, 0, "importance", r_c=1.0)
    assert sorted(plan.causal.tolist()) == [1, 2, 3]


def test_plan_errors():
    p = partition_neighborhood([0.5, 0.5], r_e=1.0)
    with pytest.raises(NoCausalNodes):
        plan_mixup(p, 0, "importance", 0.5)
    p = partition_neighborhood([0.2, 0.8], r_e=0.5)
    with pytest.raises(InvalidInput):
        plan_mixup(p, 1, "importance", 0.5)


def test_mixup_examples():
    from catgnn.causal import MixupPlan
    emb = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]])
    assert np.array_equal(causal_mixup(MixupPlan(0, np.array([], int), np.array([1.0])), emb), emb[0])
    assert causal_mixup(MixupPlan(0, np.array([1]), np.array([0.5, 0.5])), emb).tolist() == [0.5, 0.5]
    w = np.array([0.2, 0.3, 0.5])
    out = causal_mixup(MixupPlan(0, np.array([1, 2]), w), emb)
    assert out == pytest.approx(0.2 * emb[0] + 0.3 * emb[1] + 0.5 * emb[2], abs=1e-15)


def test_mixup_does_not_modify_inputs(rng):
    emb = rng.normal(size=(5, 3))
    before = emb.copy()
    p = partition_neighborhood(rng.dirichlet(np.ones(5)), r_e=0.4)
    out, _, _ = apply_variant("PI", p, emb, rng.dirichlet(np.ones(5), size=2))
    assert np.array_equal(emb, before)
    assert not np.shares_memory(out, emb)


def test_ncat_passes_through(rng):
    emb = rng.normal(size=(4, 3))
    hw = rng.dirichlet(np.ones(4), size=2)
    p = partition_neighborhood(node_importance(hw), r_e=0.5)
    out, w, kept = apply_variant("N_CAT", p, emb, hw)
    assert np.array_equal(out, emb) and np.array_equal(w, hw) and kept.tolist() == [0, 1, 2, 3]


def test_dcat_full_removal_is_empty(rng):
    hw = rng.dirichlet(np.ones(3), size=2)
    p = partition_neighborhood(node_importance(hw), r_e=1.0)
    out, w, kept = apply_variant("D_CAT", p, rng.normal(size=(3, 2)), hw)
    assert out.shape == (0, 2) and w.shape == (2, 0) and kept.size == 0


def test_dcat_renormalizes(rng):
    hw = rng.dirichlet(np.ones(5), size=3)
    p = partition_neighborhood(node_importance(hw), r_e=0.4)
    _, w, kept = apply_variant("D_CAT", p, rng.normal(size=(5, 2)), hw)
    assert kept.size == 3
    assert np.allclose(w.sum(axis=1), 1.0, atol=1e-12)


def test_scripted_pl_composition(rng):
    """partition -> plan -> mixup composed by hand for one neighborhood."""
    emb = rng.normal(size=(6, 3))
    hw = rng.dirichlet(np.ones(6), size=2)
    w, b = rng.normal(size=3), 0.3
    imp = hw.mean(axis=0) / hw.mean(axis=0).sum()
    order = np.argsort(imp, kind="stable")
    env, causal = order[:1], order[1:]           # floor(0.3 * 6) = 1
    top = causal[np.argsort(-imp[causal], kind="stable")][:2]  # floor(0.5 * 5) = 2
    parts = np.r_[env[0], top]
    s = emb[parts] @ w + b
    a = np.exp(s - s.max())
    a /= a.sum()
    expect = emb.copy()
    expect[env[0]] = a @ emb[parts]
    p = partition_neighborhood(imp, r_e=0.3)
    out, _, _ = apply_variant("PL", p, emb, hw, r_c=0.5, scorer=(w, b))
    assert np.allclose(out, expect, rtol=0, atol=1e-14)


# ------------------------------------------------------------------ properties

probs = hnp.arrays(np.float64, st.integers(1, 12), elements=st.floats(0.01, 1.0))


@settings(max_examples=200, deadline=None)
@given(probs, st.floats(0, 1), st.integers(1, 4), st.randoms(use_true_random=False))
def test_partition_properties(raw, r_e, n_heads, rnd):
    m = raw.size
    rows = [np.roll(raw, k) / raw.sum() for k in range(n_heads)]
    hw = np.array(rows)
    imp = node_importance(hw)
    perm = list(range(n_heads))
    rnd.shuffle(perm)
    assert np.allclose(node_importance(hw[perm]), imp, rtol=0, atol=1e-15)
    assert abs(imp.sum() - 1) <= 1e-9 and np.all(imp >= 0)
    p = partition_neighborhood(imp, r_e=r_e)
    assert p.env_set.size == math.floor(r_e * m + 1e-9)
    assert np.intersect1d(p.env_set, p.causal_set).size == 0
    assert np.array_equal(np.sort(np.r_[p.env_set, p.causal_set]), np.arange(m))
    if p.env_set.size and p.causal_set.size:
        assert imp[p.env_set].max() <= imp[p.causal_set].min()


@settings(max_examples=200, deadline=None)
@given(probs, st.floats(0.05, 0.95), st.floats(0.01, 1.0), st.sampled_from(["learned", "importance"]),
       st.integers(0, 2**32 - 1))
def test_mixup_weights_and_convexity(raw, r_e, r_c, mode, seed):
    rng = np.random.default_rng(seed)
    imp = raw / raw.sum()
    p = partition_neighborhood(imp, r_e=r_e)
    emb = rng.normal(size=(raw.size, 3))
    scorer = (rng.normal(size=3), rng.normal())
    for j in p.env_set:
        if p.causal_set.size == 0:
            break
        plan = plan_mixup(p, j, mode, r_c, emb, scorer)
        assert plan.causal.size >= 1
        assert abs(plan.weights.sum() - 1) <= 1e-9 and np.all(plan.weights >= 0)
        if mode == "importance":
            assert np.array_equal(plan.weights, imp[plan.participants] / imp[plan.participants].sum())
        x = causal_mixup(plan, emb)
        lo, hi = emb[plan.participants].min(axis=0), emb[plan.participants].max(axis=0)
        assert np.all(x >= lo - 1e-12) and np.all(x <= hi + 1e-12)


def test_intervention_isolation(rng):
    """Two centers share neighbor 7; computing A's intervention never alters B's."""
    emb = rng.normal(size=(10, 3))
    hw_a = rng.dirichlet(np.ones(3), size=2)
    hw_b = rng.dirichlet(np.ones(4), size=2)
    ids_a, ids_b = np.array([7, 1, 2]), np.array([3, 7, 4, 5])
    pb = partition_neighborhood(node_importance(hw_b), r_e=0.5, neighbor_ids=ids_b)
    before, _, _ = apply_variant("PI", pb, emb[ids_b], hw_b)
    pa = partition_neighborhood(node_importance(hw_a), r_e=0.7, neighbor_ids=ids_a)
    apply_variant("PI", pa, emb[ids_a], hw_a)
    after, _, _ = apply_variant("PI", pb, emb[ids_b], hw_b)
    assert np.array_equal(before, after)


def _batched_vs_loop(variant, rng, n_centers=8):
    d, h = 3, 2
    config = ModelConfig(hidden_dim=d, num_heads=h, variant=variant, r_e=0.4, r_c=0.5,
                         fixed_env_count=2)
    sizes = rng.integers(1, 7, size=n_centers)
    seg = np.repeat(np.arange(n_centers), sizes)
    nbr = np.concatenate([np.sort(rng.choice(50, s, replace=False)) for s in sizes])
    x = rng.normal(size=(seg.size, d))
    alpha = ad.segment_softmax(rng.normal(size=(seg.size, h)), seg).value
    params = {"mixup_w": ad.constant(rng.normal(size=(d, 1))), "mixup_b": ad.constant([[0.2]])}
    iv = intervene(variant, ad.constant(alpha), ad.constant(x), seg, nbr, params, config)
    batched = np.zeros((n_centers, h * d))
    if iv.weights is not None:
        batched = ad.weighted_segment_sum(iv.weights, iv.values, iv.segments, n_centers).value

    loop = np.zeros((n_centers, h * d))
    scorer = (params["mixup_w"].value[:, 0], params["mixup_b"].value[0, 0])
    fixed = config.fixed_env_count if Variant(variant).selection == "fixed" else None
    for c in range(n_centers):
        idx = np.flatnonzero(seg == c)
        hw = alpha[idx].T
        part = partition_neighborhood(node_importance(hw), r_e=config.r_e, fixed_count=fixed,
                                      neighbor_ids=nbr[idx], center=c)
        feats, w, kept = apply_variant(variant, part, x[idx], hw, config.r_c, scorer)
        loop[c] = np.concatenate([w[k] @ feats for k in range(h)])
    return batched, loop


@pytest.mark.parametrize("variant", [v.value for v in Variant])
def test_batched_intervention_matches_per_neighborhood(variant, rng):
    for _ in range(20):
        batched, loop = _batched_vs_loop(variant, rng)
        assert np.allclose(batched, loop, rtol=0, atol=1e-12)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=1, max_size=12), st.integers(0, 2**31 - 1),
       st.booleans(), st.floats(0, 1))
def test_fast_orders_match_lexsort(sizes, seed, coarse, r_e):
    from catgnn.causal import _ascending_order, _causal_order, _segment_layout, batched_partition
    rng = np.random.default_rng(seed)
    seg = np.repeat(np.arange(len(sizes)), sizes)
    nbr = np.concatenate([np.sort(rng.choice(50, k, replace=False)) for k in sizes])
    if coarse:  # ties in importance and shuffled ids
        imp = rng.integers(0, 3, seg.size) / 4.0
        nbr = np.concatenate([rng.permutation(nbr[seg == s]) for s in range(len(sizes))])
    else:
        imp = rng.random(seg.size)
    assert np.array_equal(_ascending_order(imp, seg, nbr), np.lexsort((nbr, imp, seg)))
    env, first, counts, local, asc = batched_partition(imp, seg, nbr, ModelConfig(r_e=r_e))
    assert np.array_equal((first, counts), _segment_layout(seg)[:2])
    got = _causal_order(asc, imp, env, seg, nbr, first, counts, local)
    ref = np.lexsort((nbr, -imp, env, seg))
    # same causal prefix per segment; the order among environment edges is unused
    assert np.array_equal(np.lexsort((env[got], seg[got])), np.arange(got.size))
    assert np.array_equal(got[~env[got]], ref[~env[ref]])
