"""Interpretable recurrent neural network (I-RNN) for irregularly sampled clinical time series.

Every hidden unit tracks a single input feature and the output is a sum of
per-feature terms, so predictions decompose exactly into feature contributions.
"""
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    IRNNError,
    NumericError,
    UndefinedMetricError,
    UnsupportedModelError,
)
from .kernels import BACKEND
from .model import MODEL_KINDS, Model, init_model

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "MODEL_KINDS",
    "Model",
    "init_model",
    "IRNNError",
    "DimensionError",
    "ContractError",
    "NumericError",
    "DataError",
    "ConfigError",
    "UndefinedMetricError",
    "UnsupportedModelError",
]
