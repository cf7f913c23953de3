"""
Synthesis module: Perlin masks, augmentation policies and
feature-level anomaly synthesis for training.
"""

from .augment import AugmentationPolicy, PolicyKind, apply_op, augment, speckle_noise
from .feature_synthesis import (
    AnomalySynthesizer,
    SynthesisBatch,
    SynthesisConfig,
    SynthesisMode,
    paste_image_anomaly,
    sample_anomaly_mask,
    synthesis_calls,
    synthesize_features,
    token_ground_truth,
)
from .perlin import PerlinParams, binarize_noise, normalized_noise, perlin_mask
from .sources import AnomalySourceBank, load_image

__all__ = [
    "AnomalySourceBank",
    "AnomalySynthesizer",
    "AugmentationPolicy",
    "PerlinParams",
    "PolicyKind",
    "SynthesisBatch",
    "SynthesisConfig",
    "SynthesisMode",
    "apply_op",
    "augment",
    "binarize_noise",
    "load_image",
    "normalized_noise",
    "paste_image_anomaly",
    "perlin_mask",
    "sample_anomaly_mask",
    "speckle_noise",
    "synthesis_calls",
    "synthesize_features",
    "token_ground_truth",
]
