from .autoencoder import AeConfig, AeModel, ae_encode, ae_train
from .pca import PcaModel, pca_fit, pca_inverse, pca_transform
from .pipeline import PIPELINES, ReducerSettings, output_dim, reduce_features
from .tsne import TsneConfig, TsneResult, tsne_embed

__all__ = [
    "AeConfig", "AeModel", "ae_encode", "ae_train",
    "PcaModel", "pca_fit", "pca_inverse", "pca_transform",
    "PIPELINES", "ReducerSettings", "output_dim", "reduce_features",
    "TsneConfig", "TsneResult", "tsne_embed",
]
