"""EM-based transformer for single-image rain-streak removal, on a numpy autodiff core."""
from .config import RunConfig, load_config
from .em import EmConfig
from .errors import (
    CheckpointError,
    ConfigError,
    DomainError,
    EmresError,
    GradCheckError,
    ImageFormatError,
    ShapeError,
    TapeError,
    TrainingDiverged,
)
from .model import ModelConfig, ModelParams, build, forward
from .tensor import Tape, Tensor

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "load_config", "EmConfig", "ModelConfig", "ModelParams", "build", "forward",
    "Tape", "Tensor", "EmresError", "ShapeError", "DomainError", "TapeError", "GradCheckError",
    "ConfigError", "ImageFormatError", "CheckpointError", "TrainingDiverged",
]
