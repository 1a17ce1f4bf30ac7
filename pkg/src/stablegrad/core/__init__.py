"""Core numerics for stablegrad."""

from .config import ExperimentConfig, load_config
from .optimizers import StableGradConfig, stablegrad_rescale
from .residuals import ProblemSpec, assemble_residual

__all__ = ["ExperimentConfig", "load_config", "StableGradConfig", "stablegrad_rescale", "ProblemSpec", "assemble_residual"]
