"""Probabilistic time-series forecasting with uncertainty-gated latents and attention."""

__version__ = "0.1.0"

from .errors import ConfigError, ContractError, NumericalAbort, UGFError
from .model import ModelConfig, UGGenerator

__all__ = ["ConfigError", "ContractError", "ModelConfig", "NumericalAbort", "UGFError", "UGGenerator", "__version__"]
