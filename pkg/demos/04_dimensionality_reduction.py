# %% [markdown]
# # PCA, autoencoder and t-SNE views of the same pool

# %%
import numpy as np

from cpcmal.dimred import AeConfig, ReducerSettings, TsneConfig, pca_fit, reduce_features
from cpcmal.harness import synth_dataset

ds = synth_dataset(n_blobs=4, per_blob=60, dim=40, separation=12, seed=2)
x = ds.features["raw"]

pca = pca_fit(x, 40)
share = np.cumsum(pca.explained_variance) / pca.explained_variance.sum()
print("variance kept by 2 / 8 / 32 components:", np.round(share[[1, 7, 31]], 3))

# %%
# every step sees z-scored input, so after pca32 the weak components count as
# much as the strong ones when t-SNE runs
settings = ReducerSettings(ae=AeConfig(hidden=64, lr=1e-3, batch_size=64, max_epochs=200, patience=20),
                           tsne=TsneConfig(perplexity=20))
for pipeline in ("pca32", "ae32", "tsne2", "pca32+tsne2"):
    y = reduce_features(x, pipeline, seed=0, settings=settings)
    centers = np.vstack([y[ds.groups == g].mean(0) for g in range(4)])
    spread = np.mean([np.linalg.norm(y[ds.groups == g] - centers[g], axis=1).mean() for g in range(4)])
    gap = np.min([np.linalg.norm(a - b) for i, a in enumerate(centers) for b in centers[i + 1:]])
    print(f"{pipeline:12s} dims {y.shape[1]:2d}  nearest-blob gap / within-blob spread = {gap / spread:.1f}")
