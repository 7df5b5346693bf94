# %% [markdown]
# # RBF SVM with grid search, scored by MCC

# %%
import numpy as np

from cpcmal.evaluation import ConfusionCounts, grid_search, mcc, svm_predict, svm_train

rng = np.random.default_rng(3)
x = rng.normal(size=(200, 2))
y = np.where(x[:, 0] * x[:, 1] > 0, 1, -1)  # XOR-like quadrants
train, test = np.arange(150), np.arange(150, 200)

C, gamma = grid_search(x[train], y[train])
print("chosen C, gamma:", C, round(gamma, 4))
model = svm_train(x[train], y[train], C, gamma)
pred = svm_predict(model, x[test])
counts = ConfusionCounts.from_labels(y[test], pred)
print(counts, "MCC", round(mcc(counts), 3))

# %%
# MCC ignores class balance: a constant guess scores 0 however skewed the labels
print("constant guess:", mcc(ConfusionCounts(tp=45, tn=0, fp=5, fn=0)))
