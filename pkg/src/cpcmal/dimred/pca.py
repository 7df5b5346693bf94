"""Principal component analysis via SVD of the centered data."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InputError, ShapeError
from ..featmat import FeatureMatrix, as_array
from ..nn_core import load_checkpoint, save_checkpoint


@dataclass
class PcaModel:
    mean: np.ndarray  # (D,)
    components: np.ndarray  # (D, d), orthonormal columns
    explained_variance: np.ndarray  # (d,), non-increasing

    @property
    def n_components(self) -> int:
        return self.components.shape[1]

    def save(self, path) -> None:
        save_checkpoint(
            path,
            {"mean": self.mean, "components": self.components, "explained_variance": self.explained_variance},
            {"kind": "pca", "in_dim": int(self.mean.size), "n_components": self.n_components},
        )

    @classmethod
    def load(cls, path) -> "PcaModel":
        params, arch = load_checkpoint(path)
        if arch.get("kind") != "pca":
            raise InputError(f"{path} does not hold a PCA model")
        return cls(params["mean"], params["components"], params["explained_variance"])


def pca_fit(matrix, d: int) -> PcaModel:
    """Top-``d`` principal axes; each axis is signed so its largest-magnitude entry is positive."""
    x = as_array(matrix)
    N, D = x.shape
    if d < 1 or d > D or d >= N:
        raise InputError(f"cannot fit {d} components to {N} samples of dimension {D}")
    mean = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    comps = vt[:d].T.copy()
    pivot = np.argmax(np.abs(comps), axis=0)
    comps *= np.sign(comps[pivot, np.arange(d)])
    return PcaModel(mean, comps, s[:d] ** 2 / (N - 1))


def pca_transform(model: PcaModel, matrix):
    x = as_array(matrix)
    if x.ndim != 2 or x.shape[1] != model.mean.size:
        raise ShapeError(f"PCA model expects {model.mean.size} columns, got {x.shape}")
    out = (x - model.mean) @ model.components
    return matrix.with_values(out) if isinstance(matrix, FeatureMatrix) else out


def pca_inverse(model: PcaModel, scores: np.ndarray) -> np.ndarray:
    return np.asarray(scores) @ model.components.T + model.mean
