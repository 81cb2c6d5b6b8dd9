"""Box-prompted pavement distress segmentation toolkit."""

from .core import (
    AnnotatedInstance,
    BoundingBox,
    DistressClass,
    ImageSample,
    box_area,
    clamp_box,
)
from .losses import (
    LossValue,
    TverskyParams,
    bce_loss,
    combined_loss,
    dice_loss,
    focal_tversky_loss,
    tversky_index,
)
from .model import BackboneConfig, FreezePolicy, load_backbone, surrogate_config
from .training import TrainConfig, finetune

__version__ = "0.1.0"

__all__ = [
    "AnnotatedInstance",
    "BackboneConfig",
    "BoundingBox",
    "DistressClass",
    "FreezePolicy",
    "ImageSample",
    "LossValue",
    "TrainConfig",
    "TverskyParams",
    "bce_loss",
    "box_area",
    "clamp_box",
    "combined_loss",
    "dice_loss",
    "finetune",
    "focal_tversky_loss",
    "load_backbone",
    "surrogate_config",
    "tversky_index",
]
