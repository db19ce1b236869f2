"""Entropy-regularized training and compression of small neural networks."""

from .lloyd import Codebook, IndexMap, fit_lloyd_max, fit_store_codebooks, quantize_store, reconstruct_store
from .params import ParamStore, TupleView, group_tuples
from .entropy import proxy_entropy, proxy_entropy_and_gradient, proxy_gradient, true_entropy
from .regularizer import RegConfig
from .trainer import TrainConfig, train

__all__ = [
    "Codebook",
    "IndexMap",
    "ParamStore",
    "RegConfig",
    "TrainConfig",
    "TupleView",
    "fit_lloyd_max",
    "fit_store_codebooks",
    "group_tuples",
    "proxy_entropy",
    "proxy_entropy_and_gradient",
    "proxy_gradient",
    "quantize_store",
    "reconstruct_store",
    "train",
    "true_entropy",
]
__version__ = "0.1.0"
