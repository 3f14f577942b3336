"""
Training-time augmentation.

Small rotation, horizontal flip, intensity shift and contrast scaling.
Geometric transforms move the boxes (and break centers) with the image;
photometric ones only touch intensities, which are re-clamped to [0, 1].
"""

import math
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from fracture_distill.data.synthetic import BoundingBox, Sample
from fracture_distill.errors import ConfigError

_ROUNDING_SLACK = 1e-9


@dataclass(frozen=True)
class AugmentConfig:
    """Ranges of the random augmentation draw."""

    max_rotation_deg: float = 10.0
    flip_probability: float = 0.5
    max_intensity_shift: float = 0.1
    contrast_range: Tuple[float, float] = (0.9, 1.1)

    def __post_init__(self) -> None:
        object.__setattr__(self, "contrast_range", tuple(float(c) for c in self.contrast_range))
        if self.max_rotation_deg < 0 or self.max_intensity_shift < 0:
            raise ConfigError("augmentation magnitudes must be non-negative")
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ConfigError(f"flip_probability must lie in [0, 1], got {self.flip_probability}")
        low, high = self.contrast_range
        if not 0.0 < low <= high:
            raise ConfigError(f"invalid contrast_range {self.contrast_range}")


@dataclass(frozen=True)
class AugmentParams:
    """One concrete augmentation draw."""

    angle_deg: float = 0.0
    flip: bool = False
    intensity_shift: float = 0.0
    contrast: float = 1.0

    @property
    def is_identity(self) -> bool:
        return (
            self.angle_deg == 0.0
            and not self.flip
            and self.intensity_shift == 0.0
            and self.contrast == 1.0
        )


def draw_params(rng: np.random.Generator, config: AugmentConfig = AugmentConfig()) -> AugmentParams:
    """Draw augmentation parameters; consumes exactly four numbers from `rng`."""
    angle = rng.uniform(-config.max_rotation_deg, config.max_rotation_deg)
    flip = rng.random() < config.flip_probability
    shift = rng.uniform(-config.max_intensity_shift, config.max_intensity_shift)
    contrast = rng.uniform(*config.contrast_range)
    return AugmentParams(
        angle_deg=float(angle),
        flip=bool(flip),
        intensity_shift=float(shift),
        contrast=float(contrast),
    )


# =============================================================================
# Geometry
# =============================================================================

def _rotation(angle_deg: float) -> Tuple[float, float]:
    theta = math.radians(angle_deg)
    return math.cos(theta), math.sin(theta)


def rotate_image(image: np.ndarray, angle_deg: float, order: int = 1) -> np.ndarray:
    """
    Rotate about the image center with bilinear resampling.

    A point (x, y) moves to (cx + c*dx - s*dy, cy + s*dx + c*dy) with
    dx = x - cx, dy = y - cy; `rotate_point` and `rotate_box` follow the
    same convention.
    """
    if angle_deg == 0.0:
        return image.copy()
    c, s = _rotation(angle_deg)
    h, w = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    # Output (row, col) -> input (row, col), the inverse rotation.
    matrix = np.array([[c, -s], [s, c]])
    offset = np.array([cy - c * cy + s * cx, cx - s * cy - c * cx])
    out = ndimage.affine_transform(
        image.astype(np.float64), matrix, offset=offset, order=order, mode="nearest"
    )
    return out.astype(image.dtype)


def rotate_point(x: float, y: float, angle_deg: float, width: int, height: int) -> Tuple[float, float]:
    c, s = _rotation(angle_deg)
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    dx, dy = x - cx, y - cy
    return cx + c * dx - s * dy, cy + s * dx + c * dy


def rotate_box(box: BoundingBox, angle_deg: float, width: int, height: int) -> Optional[BoundingBox]:
    """
    Axis-aligned bounding rectangle of a rotated box, clipped to the image.

    Pixel i covers [i - 0.5, i + 0.5]; the four extent corners are
    rotated and re-snapped to pixel indices. Returns None if nothing of
    the box is left inside the image.
    """
    corners = [
        (box.x0 - 0.5, box.y0 - 0.5),
        (box.x1 - 0.5, box.y0 - 0.5),
        (box.x0 - 0.5, box.y1 - 0.5),
        (box.x1 - 0.5, box.y1 - 0.5),
    ]
    moved = [rotate_point(x, y, angle_deg, width, height) for x, y in corners]
    xs = [p[0] for p in moved]
    ys = [p[1] for p in moved]
    x0 = max(0, math.floor(min(xs) + 0.5 + _ROUNDING_SLACK))
    y0 = max(0, math.floor(min(ys) + 0.5 + _ROUNDING_SLACK))
    x1 = min(width, math.ceil(max(xs) + 0.5 - _ROUNDING_SLACK))
    y1 = min(height, math.ceil(max(ys) + 0.5 - _ROUNDING_SLACK))
    if x0 >= x1 or y0 >= y1:
        return None
    return BoundingBox(x0, y0, x1, y1)


def flip_box(box: BoundingBox, width: int) -> BoundingBox:
    return BoundingBox(width - box.x1, box.y0, width - box.x0, box.y1)


def _clip_point(x: float, y: float, width: int, height: int) -> Tuple[int, int]:
    return min(max(int(round(x)), 0), width - 1), min(max(int(round(y)), 0), height - 1)


# =============================================================================
# Augmentation
# =============================================================================

def apply_augment(sample: Sample, params: AugmentParams) -> Sample:
    """Apply a concrete draw: rotation, then flip, then photometric jitter."""
    if params.is_identity:
        return sample

    image = sample.image
    h, w = image.shape
    boxes: List[BoundingBox] = list(sample.boxes)
    centers = list(sample.break_centers)

    angle = params.angle_deg
    if angle != 0.0:
        rotated = [rotate_box(b, angle, w, h) for b in boxes]
        if any(b is None for b in rotated):
            # Keep every label on the image rather than drop a box.
            angle = 0.0
        else:
            boxes = [b for b in rotated if b is not None]
            centers = [
                _clip_point(*rotate_point(x, y, angle, w, h), w, h) for x, y in centers
            ]
            image = rotate_image(image, angle)

    if params.flip:
        image = image[:, ::-1]
        boxes = [flip_box(b, w) for b in boxes]
        centers = [(w - 1 - x, y) for x, y in centers]

    if params.contrast != 1.0 or params.intensity_shift != 0.0:
        bias = 0.5 * (1.0 - params.contrast) + params.intensity_shift
        image = np.clip(image * params.contrast + bias, 0.0, 1.0)

    return replace(
        sample,
        image=np.ascontiguousarray(image, dtype=np.float32),
        boxes=tuple(boxes),
        break_centers=tuple(centers),
    )


def augment(
    sample: Sample, rng_state: np.random.Generator, config: AugmentConfig = AugmentConfig()
) -> Sample:
    """Draw parameters from `rng_state` and apply them."""
    return apply_augment(sample, draw_params(rng_state, config))
