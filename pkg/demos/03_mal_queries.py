# %% [markdown]
# # Medoid-based active learning
# Cluster the unlabeled pool with k-medoids (k = N/3), then spend the
# labeling budget on the medoids of the largest clusters.

# %%
import numpy as np

from cpcmal.harness import synth_dataset
from cpcmal.mal import affinity, assign_labels, default_k, k_medoids, query_plan, random_plan

ds = synth_dataset(n_blobs=8, per_blob=40, dim=10, halo_fraction=0.3, seed=1)
x, blobs = ds.features["raw"], ds.groups
print("pool:", x.shape, "halo rows:", int(np.sum(blobs < 0)))

clusters = k_medoids(affinity(x, "cosine"), default_k(len(x)), seed=0)
print("clusters:", clusters.k, "cost:", round(clusters.cost, 2), "swap passes:", len(clusters.cost_history))

# %%
budget = 12
picked = blobs[query_plan(clusters, budget).indices]
print(f"mal     blobs hit {len(set(picked[picked >= 0]))}/8, halo picks {int(np.sum(picked < 0))}")
hits, halo = [], []
for seed in range(20):
    picked = blobs[random_plan(len(x), budget, seed=seed).indices]
    hits.append(len(set(picked[picked >= 0])))
    halo.append(np.sum(picked < 0))
print(f"random  blobs hit {np.mean(hits):.1f}/8, halo picks {np.mean(halo):.1f}  (mean of 20 draws)")

# %%
# cluster_labels spreads each medoid's label over its cluster
plan = query_plan(clusters, budget, "cluster_labels")
idx, labels = assign_labels(plan, clusters, ds.valence)
print("labeled rows:", idx.size, "agreement with truth:", float(np.mean(labels == ds.valence[idx])))
