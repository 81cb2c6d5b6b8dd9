"""Shared domain types and pixel-space geometry.

Coordinate convention used everywhere: x = column, y = row, origin at the
top-left corner, boxes inclusive of both corners.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numpy.typing import NDArray

# Masks are {0,1} uint8 in memory; the 0/255 byte form exists only at file
# and wire boundaries (see dataio).
BinaryMask = NDArray[np.uint8]
ProbabilityMask = NDArray[np.floating]


class DistressClass(Enum):
    TRANSVERSE = "transverse"
    LONGITUDINAL = "longitudinal"
    ALLIGATOR = "alligator"
    BLOCK = "block"
    PATCH = "patch"
    MANHOLE = "manhole"


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned prompt rectangle, corners inclusive.

    Coordinates may be negative or exceed image bounds until clamped;
    ordering (x_min <= x_max, y_min <= y_max) is always enforced.
    """

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self) -> None:
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(
                f"box corners out of order: ({self.x_min},{self.y_min})-"
                f"({self.x_max},{self.y_max})"
            )

    def as_xyxy(self) -> tuple[int, int, int, int]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def clamp_box(box: BoundingBox, height: int, width: int) -> BoundingBox:
    """Clip a box to image bounds; error if it lies entirely outside."""
    if height <= 0 or width <= 0:
        raise ValueError(f"image dimensions must be positive, got {height}x{width}")
    if box.x_max < 0 or box.y_max < 0 or box.x_min > width - 1 or box.y_min > height - 1:
        raise ValueError(f"degenerate box: {box.as_xyxy()} outside {height}x{width} image")
    return BoundingBox(
        x_min=max(0, box.x_min),
        y_min=max(0, box.y_min),
        x_max=min(width - 1, box.x_max),
        y_max=min(height - 1, box.y_max),
    )


def box_area(box: BoundingBox) -> int:
    """Pixel count covered by the box (corners inclusive)."""
    return (box.x_max - box.x_min + 1) * (box.y_max - box.y_min + 1)


def ensure_binary_mask(values: np.ndarray) -> BinaryMask:
    """Validate and return a {0,1} uint8 mask."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("binary mask values must be exactly 0 or 1")
    return arr.astype(np.uint8, copy=False)


def ensure_probability_mask(values: np.ndarray) -> ProbabilityMask:
    """Validate and return a float64 mask with all values in [0, 1]."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("probability mask contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("probability mask values must lie in [0, 1]")
    return arr


@dataclass(frozen=True)
class AnnotatedInstance:
    """One annotated distress: geometry plus its derived tight box.

    Exactly one geometry source is set: a polygon (>= 3 vertices, pixel
    coordinates), or a mask file reference. Box-only instances (no
    geometry) are allowed for prompt-only datasets. `component` selects
    one 8-connected foreground component of a shared whole-image mask.
    """

    distress_class: DistressClass | None
    box: BoundingBox
    polygon: tuple[tuple[int, int], ...] | None = None
    mask_path: str | None = None
    component: int | None = None

    def __post_init__(self) -> None:
        if self.polygon is not None and self.mask_path is not None:
            raise ValueError("instance cannot carry both a polygon and a mask reference")
        if self.polygon is not None and len(self.polygon) < 3:
            raise ValueError(f"polygon needs >= 3 vertices, got {len(self.polygon)}")

    @property
    def class_name(self) -> str:
        return self.distress_class.value if self.distress_class else "unlabeled"


@dataclass(frozen=True)
class ImageSample:
    """One pavement image with its per-distress annotations and split tag."""

    id: str
    pixels: NDArray[np.uint8]  # H x W x 3
    instances: tuple[AnnotatedInstance, ...] = field(default_factory=tuple)
    split: str = "train"

    def __post_init__(self) -> None:
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"image must be HxWx3, got shape {self.pixels.shape}")
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")
