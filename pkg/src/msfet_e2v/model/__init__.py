from .config import TINY, ConfigError, ModelConfig
from .network import MSFETE2V, RecurrentState, model_forward
from .weights import ModelWeights, architecture, init_weights

__all__ = [
    "TINY",
    "ConfigError",
    "MSFETE2V",
    "ModelConfig",
    "ModelWeights",
    "RecurrentState",
    "architecture",
    "init_weights",
    "model_forward",
]
