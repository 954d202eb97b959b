"""Context-aware user-item representation learning for rating prediction.

Review documents and rating interactions each yield a pair-specific feature
vector; factorization-machine heads score both and a dynamic convex
combination fuses them.
"""

__version__ = "0.1.0"

from .corpus import SplitDataset, Vocabulary, load_corpus, preprocess, save_corpus
from .errors import CarlError, ColdStartError, ConfigError, DataError, NumericFault, ShapeError
from .model import CarlModel, ModelConfig, variant_config
from .trainer import TrainConfig, TrainReport, train

__all__ = [
    "CarlError",
    "CarlModel",
    "ColdStartError",
    "ConfigError",
    "DataError",
    "ModelConfig",
    "NumericFault",
    "ShapeError",
    "SplitDataset",
    "TrainConfig",
    "TrainReport",
    "Vocabulary",
    "load_corpus",
    "preprocess",
    "save_corpus",
    "train",
    "variant_config",
]
