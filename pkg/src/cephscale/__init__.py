"""Calibrated-ruler detection and pixel-millimeter ratio estimation for cephalograms."""
from .cornerdetect import ReferenceModel, default_reference
from .errors import ScaleDetectionError
from .imagecore import read_image
from .pipeline import DetectionFailure, DetectionResult, PipelineConfig, detect_batch, detect_scale
from .voting import CornerModel, VotingConfig, load_model, save_model, train_predictor

__all__ = [
    "CornerModel", "DetectionFailure", "DetectionResult", "PipelineConfig", "ReferenceModel",
    "ScaleDetectionError", "VotingConfig", "default_reference", "detect_batch", "detect_scale",
    "load_model", "read_image", "save_model", "train_predictor",
]
__version__ = "0.1.0"
