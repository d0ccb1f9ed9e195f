"""NFV-enabled multi-UAV access network simulator with a hybrid-action DRL stack."""

__version__ = "0.1.0"

from .config import ScenarioConfig, load_config, validate_config
from .env import ActionSpec, HybridAction, UavNetworkEnv
from .services import Service

__all__ = [
    "ActionSpec",
    "HybridAction",
    "ScenarioConfig",
    "Service",
    "UavNetworkEnv",
    "load_config",
    "validate_config",
    "__version__",
]
