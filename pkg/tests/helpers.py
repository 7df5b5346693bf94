"""Independent reference computations shared by tests."""
import numpy as np


def silhouette(x, labels):
    """Mean silhouette coefficient by its textbook definition."""
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    d = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(-1))
    scores = []
    for i in range(len(x)):
        same = labels == labels[i]
        if same.sum() == 1:
            scores.append(0.0)
            continue
        a = d[i, same].sum() / (same.sum() - 1)
        b = min(d[i, labels == lab].mean() for lab in np.unique(labels) if lab != labels[i])
        scores.append((b - a) / max(a, b))
    return float(np.mean(scores))


def three_blobs(seed, n_per=100, dim=32, scale=4.0):
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(3, dim)) * scale
    labels = np.repeat(np.arange(3), n_per)
    return centers[labels] + rng.normal(size=(3 * n_per, dim)), labels
