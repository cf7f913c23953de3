"""
Feature module: frozen backbones and multi-level feature fusion.
"""

from .backbone import (
    BackboneSpec,
    FeatureExtractor,
    IMAGENET_MEAN,
    IMAGENET_STD,
    UnknownBackboneError,
    extract_multilevel,
    fuse_levels,
    fused_channels,
    get_backbone,
    register_backbone,
)

__all__ = [
    "BackboneSpec",
    "FeatureExtractor",
    "IMAGENET_MEAN",
    "IMAGENET_STD",
    "UnknownBackboneError",
    "extract_multilevel",
    "fuse_levels",
    "fused_channels",
    "get_backbone",
    "register_backbone",
]
