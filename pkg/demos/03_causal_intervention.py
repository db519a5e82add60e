# Inspecting and intervening on one neighborhood
#
# Attention across heads is averaged into a per-neighbor importance. The
# least important fraction r_e is treated as environment; each environment
# neighbor is replaced by a convex mix of itself and the top causal neighbors.

import numpy as np

from catgnn.causal import apply_variant, node_importance, partition_neighborhood, plan_mixup

rng = np.random.default_rng(3)
m, d = 8, 4
emb = rng.normal(size=(m, d))
heads = rng.dirichlet(np.ones(m), size=4)        # 4 heads of attention over 8 neighbors

imp = node_importance(heads)
part = partition_neighborhood(imp, r_e=0.3, neighbor_ids=np.arange(100, 100 + m))
print("importance", np.round(imp, 3))
print("environment positions", part.env_set, "causal positions", part.causal_set)

# Importance-weighted mixup (the I in PI/FI).
j = part.env_set[0]
plan = plan_mixup(part, j, "importance", r_c=0.5)
print(f"env {j} mixed with {plan.causal} using weights {np.round(plan.weights, 3)}")

# Learned weights use a small linear scorer on the embeddings.
scorer = (rng.normal(size=d), 0.0)
for variant in ("PL", "PI", "D_CAT", "N_CAT"):
    feats, w, kept = apply_variant(variant, part, emb, heads, r_c=0.5, scorer=scorer)
    changed = int(np.sum(np.any(feats != emb[kept], axis=1)))
    print(f"{variant:6s} neighbors kept {kept.size}, rows changed {changed}")
