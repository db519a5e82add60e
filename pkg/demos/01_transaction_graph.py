# Building a temporal transaction graph
#
# Each transaction becomes a node. Three relations link a transaction to
# earlier ones that share a source account, a target or a location,
# as long as the earlier one falls inside the time window. Each node keeps
# only its most recent `max_neighbors` links per relation.

import numpy as np

from catgnn.graph import TransactionRecord, build_temporal_graph, temporal_split

rng = np.random.default_rng(0)
records = [
    TransactionRecord(txn_id=i, time=int(t), source=f"acct{rng.integers(5)}",
                      target=f"shop{rng.integers(4)}", amount=float(rng.gamma(2.0, 40.0)),
                      location=f"city{rng.integers(3)}", txn_type=rng.choice(["card", "wire"]),
                      label=int(rng.random() < 0.15))
    for i, t in enumerate(np.sort(rng.integers(0, 7 * 86_400, size=60)))
]

graph = build_temporal_graph(records, window=86_400, max_neighbors=4)
print("nodes", graph.num_nodes, "features", graph.feature_dim)
for name, adj in zip(graph.relation_names, graph.relations):
    print(f"{name:10s} edges {adj.nnz:4d}  max degree {adj.degrees().max()}")

# Edges only point back in time.
src, dst = graph.relations[0].edges()
t = np.array([r.time for r in records])
print("all neighbors older:", bool(np.all(t[dst] <= t[src])))

# Earlier transactions train, later ones test.
split = temporal_split(graph, cut=0.7, valid_fraction=0.2, seed=0)
print("train/valid/test sizes", split.sizes())
