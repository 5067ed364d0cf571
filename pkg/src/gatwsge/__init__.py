"""Unified image/video gaze transformer with weakly-supervised self-training."""
from .errors import GazeError
from .geometry import angular_error_deg, pseudo_label_3d, split_of
from .model import GaT, ModelConfig, build_model, model_forward

__version__ = "0.1.0"

__all__ = ["GaT", "GazeError", "ModelConfig", "angular_error_deg", "build_model", "model_forward",
           "pseudo_label_3d", "split_of", "__version__"]
