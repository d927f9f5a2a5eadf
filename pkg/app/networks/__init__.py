from .mlp import Mlp, gradient_check
from .training import TrainingConfig, train_classifier, train_denoiser
from .generator import ConfidenceGuidedGenerator

__all__ = ["Mlp", "gradient_check", "TrainingConfig", "train_classifier", "train_denoiser", "ConfidenceGuidedGenerator"]
