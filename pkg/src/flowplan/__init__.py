"""Flow-based dynamic latent world model for toy trajectory planning."""

from .config import RunConfig, load_config
from .estimator import FlowPlanRegressor
from .tensor import Tensor, no_grad

__all__ = ["RunConfig", "load_config", "FlowPlanRegressor", "Tensor", "no_grad"]
__version__ = "0.1.0"
