"""Composable reducer pipelines (feature x reducer grid)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..audio import zscore_fit_apply
from ..errors import InputError
from .autoencoder import AeConfig, ae_encode, ae_train
from .pca import pca_fit, pca_transform
from .tsne import TsneConfig, tsne_embed

PIPELINES: dict[str, list[tuple[str, int]]] = {
    "none": [],
    "pca32": [("pca", 32)],
    "pca2": [("pca", 2)],
    "ae32": [("ae", 32)],
    "ae2": [("ae", 2)],
    "tsne2": [("tsne", 2)],
    "pca32+tsne2": [("pca", 32), ("tsne", 2)],
    "ae32+tsne2": [("ae", 32), ("tsne", 2)],
}


@dataclass
class ReducerSettings:
    zscore: bool = True
    ae: AeConfig = field(default_factory=AeConfig)
    tsne: TsneConfig = field(default_factory=TsneConfig)


def output_dim(pipeline: str, in_dim: int) -> int:
    steps = PIPELINES[pipeline]
    return steps[-1][1] if steps else in_dim


def reduce_features(x, pipeline: str, seed: int = 0, settings: ReducerSettings | None = None) -> np.ndarray:
    """Run ``pipeline`` on the rows of ``x``, z-scoring before each step when enabled."""
    if pipeline not in PIPELINES:
        raise InputError(f"unknown reducer pipeline {pipeline!r}; choose from {sorted(PIPELINES)}")
    settings = settings or ReducerSettings()
    x = np.asarray(x, dtype=np.float64)
    if settings.zscore:
        x = zscore_fit_apply(x)[0]
    for i, (kind, d) in enumerate(PIPELINES[pipeline]):
        if i > 0 and settings.zscore:
            x = zscore_fit_apply(x)[0]
        if kind == "pca":
            x = pca_transform(pca_fit(x, d), x)
        elif kind == "ae":
            cfg = AeConfig(**{**settings.ae.__dict__, "bottleneck": d})
            x = ae_encode(ae_train(x, seed, cfg)[0], x)
        else:
            cfg = TsneConfig(**{**settings.tsne.__dict__, "n_components": d, "seed": seed})
            x = tsne_embed(x, cfg).embedding
    return x
