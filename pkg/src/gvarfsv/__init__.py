"""Bayesian global VAR with factor stochastic volatility and sign/zero identification."""

from .errors import ConfigError, DataError, GvarError, IdentificationError, NumericalError
from .gibbs import ChainConfig, PriorConfig, compute_dic, prepare_data, run_chain
from .model_core import CoefficientState, ModelSpec, WeightMatrix

__version__ = "0.1.0"

__all__ = [
    "ChainConfig", "CoefficientState", "ConfigError", "DataError", "GvarError", "IdentificationError",
    "ModelSpec", "NumericalError", "PriorConfig", "WeightMatrix", "compute_dic", "prepare_data", "run_chain",
]
