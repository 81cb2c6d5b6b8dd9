from .base import (
    ARTIFACT_KEY,
    COMPONENTS,
    BackboneBundle,
    BackboneConfig,
    FreezePolicy,
    ImageEmbedding,
    MaskPrediction,
    PromptEmbedding,
    load_backbone,
    trainable_parameters,
)
from .surrogate import build_surrogate, surrogate_config
from .sam import VIT_SPECS, build_sam_backbone, detect_variant

__all__ = [
    "ARTIFACT_KEY",
    "COMPONENTS",
    "BackboneBundle",
    "BackboneConfig",
    "FreezePolicy",
    "ImageEmbedding",
    "MaskPrediction",
    "PromptEmbedding",
    "VIT_SPECS",
    "build_sam_backbone",
    "build_surrogate",
    "detect_variant",
    "load_backbone",
    "surrogate_config",
    "trainable_parameters",
]
