"""Semi-discrete PINN policy iteration: collocation-trained value functions
for HJB policy evaluation, an exact grid oracle, and the diagnostics that
measure every term of the one-step error bound."""

from .envs import Environment, make_env, rollout
from .errors import SdpiError
from .fd import FdConfig
from .fields import GridField, ScalarField
from .geometry import Box
from .network import ValueNetwork
from .pi import SdpiConfig, run_sdpi

__version__ = "0.1.0"

__all__ = [
    "Box",
    "Environment",
    "FdConfig",
    "GridField",
    "ScalarField",
    "SdpiConfig",
    "SdpiError",
    "ValueNetwork",
    "make_env",
    "rollout",
    "run_sdpi",
    "__version__",
]
