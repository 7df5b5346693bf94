# %% [markdown]
# # A small MAL-versus-random experiment
# The bundled 1500-sample run takes about a quarter of an hour
# (`cpcmal run --bundled quadrant_blobs --out runs/blobs`); this one is
# a scaled-down copy that finishes in under a minute.

# %%
import tempfile

from cpcmal.harness import aggregate, bundled_config, run_experiment

cfg = bundled_config().to_dict()
cfg["dataset"].update(n_blobs=8, per_blob=40)
cfg.update(name="demo", reducers=["none"], budgets=[2, 5, 50], folds=3, repeats=2)

with tempfile.TemporaryDirectory() as out:
    report = run_experiment(cfg, out)
    print(len(report.records), "records, failures:", report.failures)

table = aggregate(report.records, by=("budget", "strategy"))
for row in table.contrasts:
    print(f"budget {row['budget']:>3}%  mal {row['mean_mal']:.3f}  random {row['mean_random']:.3f}  p={row['p']:.3f}")
