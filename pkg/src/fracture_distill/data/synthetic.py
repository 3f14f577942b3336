"""
Seeded synthetic detection dataset.

Stands in for a chest radiograph archive at desk scale: every image shows
a few elongated bright ridges ("bones") on a noisy background. Every
image has a few foramina, round dips on intact bone that a detector must
learn to ignore. Positive images also carry one or more "breaks": a
partial crack across a ridge followed by a short dimmer fragment. Each
break is recorded as a bounding box that contains every pixel it alters.

Training data is split into three sets:

- R: region-labeled positives, boxes visible to training
- P: image-level positives, boxes hidden from training (kept for scoring)
- N: image-level negatives, no breaks

Validation and test splits hold image-level positives (with hidden boxes)
and negatives. Every sample draws its randomness from
(seed, split, kind, index), so serial and parallel generation agree
bit for bit and shrinking P keeps the remaining samples unchanged.
"""

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from fracture_distill.errors import ConfigError, ContractError, ShapeError

logger = logging.getLogger(__name__)

MIN_IMAGE_SIZE = 16
BOX_DILATION = 2
WORKERS_ENV = "FRACTURE_DISTILL_WORKERS"

SPLIT_CODES = {"train": 0, "val": 1, "test": 2}


class LabelKind(str, Enum):
    """How much supervision a sample carries."""

    REGION = "RegionLabeled"
    POSITIVE = "ImagePositive"
    NEGATIVE = "ImageNegative"

    @property
    def letter(self) -> str:
        return {"RegionLabeled": "R", "ImagePositive": "P", "ImageNegative": "N"}[
            self.value
        ]

    @property
    def code(self) -> int:
        return {"RegionLabeled": 0, "ImagePositive": 1, "ImageNegative": 2}[self.value]


@dataclass(frozen=True)
class BoundingBox:
    """Pixel box [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self) -> None:
        if not (0 <= self.x0 < self.x1 and 0 <= self.y0 < self.y1):
            raise ShapeError(f"degenerate box {self.as_list()}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    def fits(self, width: int, height: int) -> bool:
        return self.x1 <= width and self.y1 <= height

    def contains(self, x: int, y: int) -> bool:
        return self.x0 <= x < self.x1 and self.y0 <= y < self.y1

    def as_list(self) -> List[int]:
        return [self.x0, self.y0, self.x1, self.y1]

    @classmethod
    def from_list(cls, values: Sequence[int]) -> "BoundingBox":
        x0, y0, x1, y1 = (int(v) for v in values)
        return cls(x0, y0, x1, y1)


@dataclass(frozen=True, eq=False)
class Sample:
    """One image with its label kind and boxes."""

    sample_id: str
    image: np.ndarray
    label_kind: LabelKind
    boxes: Tuple[BoundingBox, ...] = ()
    # Generator metadata: (x, y) pixel inside each rendered break.
    break_centers: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        if self.image.ndim != 2:
            raise ShapeError(f"sample image must be 2-D, got {self.image.shape}")
        if self.label_kind is LabelKind.REGION and not self.boxes:
            raise ContractError(f"{self.sample_id}: region-labeled sample without boxes")
        if self.label_kind is LabelKind.NEGATIVE and (self.boxes or self.break_centers):
            raise ContractError(f"{self.sample_id}: negative sample with breaks")

    @property
    def height(self) -> int:
        return int(self.image.shape[0])

    @property
    def width(self) -> int:
        return int(self.image.shape[1])

    @property
    def is_positive(self) -> bool:
        return self.label_kind is not LabelKind.NEGATIVE


@dataclass(frozen=True)
class DatasetSpec:
    """Sizes, imbalance and seed of a synthetic dataset."""

    image_size: int = 64
    n_region: int = 40
    n_positive: int = 400
    n_negative: int = 4000
    breaks_per_positive: Tuple[int, int] = (1, 3)
    seed: int = 0
    n_val_positive: int = 40
    n_val_negative: int = 200
    n_test_positive: int = 100
    n_test_negative: int = 500
    # Leading fraction of P kept for training.
    positive_fraction: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "breaks_per_positive", tuple(int(b) for b in self.breaks_per_positive)
        )
        if self.image_size < MIN_IMAGE_SIZE:
            raise ConfigError(
                f"image_size {self.image_size} is too small to place a bone "
                f"(minimum {MIN_IMAGE_SIZE})"
            )
        counts = {
            "n_region": self.n_region,
            "n_positive": self.n_positive,
            "n_negative": self.n_negative,
            "n_val_positive": self.n_val_positive,
            "n_val_negative": self.n_val_negative,
            "n_test_positive": self.n_test_positive,
            "n_test_negative": self.n_test_negative,
        }
        for name, value in counts.items():
            if value < 0:
                raise ConfigError(f"{name} must be >= 0, got {value}")
        if len(self.breaks_per_positive) != 2:
            raise ConfigError("breaks_per_positive must be a [min, max] pair")
        low, high = self.breaks_per_positive
        if not 1 <= low <= high:
            raise ConfigError(f"invalid breaks_per_positive range {self.breaks_per_positive}")
        if not 0.0 <= self.positive_fraction <= 1.0:
            raise ConfigError(
                f"positive_fraction must lie in [0, 1], got {self.positive_fraction}"
            )

    @property
    def n_positive_used(self) -> int:
        return int(round(self.positive_fraction * self.n_positive))

    @property
    def imbalance(self) -> float:
        """Negatives per positive in the training split."""
        positives = self.n_region + self.n_positive_used
        return self.n_negative / positives if positives else math.inf


@dataclass
class SyntheticDataset:
    """Training sets R, P, N plus validation and test splits."""

    spec: DatasetSpec
    region: List[Sample] = field(default_factory=list)
    positive: List[Sample] = field(default_factory=list)
    negative: List[Sample] = field(default_factory=list)
    val: List[Sample] = field(default_factory=list)
    test: List[Sample] = field(default_factory=list)

    def splits(self) -> Dict[str, List[Sample]]:
        return {
            "train": [*self.region, *self.positive, *self.negative],
            "val": self.val,
            "test": self.test,
        }

    def counts(self) -> Dict[str, int]:
        return {
            "region": len(self.region),
            "positive": len(self.positive),
            "negative": len(self.negative),
            "val": len(self.val),
            "test": len(self.test),
        }

    def with_positive_fraction(self, fraction: float) -> "SyntheticDataset":
        """Same dataset keeping only the leading `fraction` of P."""
        spec = replace(self.spec, positive_fraction=fraction)
        keep = min(len(self.positive), spec.n_positive_used)
        return replace(self, spec=spec, positive=self.positive[:keep])


# =============================================================================
# Rendering
# =============================================================================

# Appearance ranges. Breaks are partial cracks, not clean gaps, and every
# image (negatives included) carries foramina: round dips on intact bone.
GAP_ATTENUATION = (0.35, 0.6)
STEP_ATTENUATION = (0.75, 0.9)
FORAMINA_PER_IMAGE = (1, 4)
FORAMEN_DEPTH = (0.3, 0.55)
PIXEL_NOISE = 0.03


@dataclass(frozen=True)
class _Bone:
    y_center: float
    slope: float
    curvature: float
    half_width: float
    amplitude: float
    ripple: float
    ripple_phase: float

    def line(self, x: np.ndarray | float, size: int):
        u = np.asarray(x, dtype=np.float64) - size / 2.0
        return self.y_center + self.slope * u + self.curvature * u * u

    def brightness(self, x: np.ndarray, size: int) -> np.ndarray:
        # Slow density variation along the shaft.
        return self.amplitude * (
            1.0 + self.ripple * np.sin(2.0 * np.pi * x / size + self.ripple_phase)
        )


def _draw_bones(size: int, rng: np.random.Generator) -> List[_Bone]:
    n_bones = int(rng.integers(3, 6))
    spacing = size / n_bones
    bones = []
    for k in range(n_bones):
        bones.append(
            _Bone(
                y_center=(k + 0.5) * spacing + rng.uniform(-0.15, 0.15) * spacing,
                slope=rng.uniform(-0.2, 0.2),
                curvature=rng.uniform(-1.0, 1.0) * 0.5 / size,
                half_width=rng.uniform(1.5, 2.5),
                amplitude=rng.uniform(0.45, 0.65),
                ripple=rng.uniform(0.0, 0.2),
                ripple_phase=rng.uniform(0.0, 2.0 * np.pi),
            )
        )
    return bones


def _foramina_field(
    bones: List[_Bone], size: int, rng: np.random.Generator
) -> List[np.ndarray]:
    """Per-bone multiplicative fields with round dips that mimic small breaks."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    fields = [np.ones((size, size)) for _ in bones]
    count = int(rng.integers(FORAMINA_PER_IMAGE[0], FORAMINA_PER_IMAGE[1] + 1))
    for _ in range(count):
        index = int(rng.integers(len(bones)))
        cx = rng.uniform(2.0, size - 2.0)
        cy = float(bones[index].line(cx, size))
        sigma = rng.uniform(0.8, 1.3)
        depth = rng.uniform(*FORAMEN_DEPTH)
        dip = depth * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * sigma**2))
        fields[index] *= 1.0 - dip
    return fields


def _place_break(
    bone: _Bone, size: int, rng: np.random.Generator
) -> Optional[Tuple[int, int, BoundingBox, Tuple[int, int]]]:
    """Pick a gap [gx, gx + length) on a bone fully inside the image."""
    margin = BOX_DILATION + 3
    for _ in range(20):
        length = int(rng.integers(2, 4))
        gx = int(rng.integers(margin, size - margin - length))
        ys = bone.line(np.arange(gx, gx + length), size)
        top = math.floor(float(ys.min()) - bone.half_width) - BOX_DILATION
        bottom = math.ceil(float(ys.max()) + bone.half_width) + 1 + BOX_DILATION
        if top < 1 or bottom > size - 1:
            continue
        box = BoundingBox(
            x0=max(gx - BOX_DILATION, 0),
            y0=max(top, 0),
            x1=min(gx + length + BOX_DILATION, size),
            y1=min(bottom, size),
        )
        cx = gx + length // 2
        cy = int(round(float(bone.line(cx, size))))
        return gx, length, box, (cx, cy)
    return None


def _break_field(
    size: int, gx: int, length: int, box: BoundingBox, rng: np.random.Generator
) -> np.ndarray:
    """Crack plus a displaced-fragment step, both confined to the box."""
    factor = np.ones((size, size))
    rows = slice(box.y0, box.y1)
    factor[rows, gx : gx + length] = rng.uniform(*GAP_ATTENUATION)
    factor[rows, gx + length : box.x1] = rng.uniform(*STEP_ATTENUATION)
    return factor


def render_image(
    size: int, rng: np.random.Generator, n_breaks: int
) -> Tuple[np.ndarray, List[BoundingBox], List[Tuple[int, int]]]:
    """
    Render one image with `n_breaks` breaks.

    Returns the 8-bit quantized image as float32 in [0, 1], the break
    boxes and one pixel inside each break. Breaks draw from a child
    stream that is split off whether or not they are rendered, so the
    same generator state with `n_breaks=0` yields the intact image and
    the two differ only inside the returned boxes.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    background = 0.12 + ndimage.gaussian_filter(
        0.1 * rng.standard_normal((size, size)), sigma=1.5
    )
    image = background.copy()

    bones = _draw_bones(size, rng)
    foramina = _foramina_field(bones, size, rng)
    break_rng = np.random.default_rng(rng.integers(0, 2**62))
    noise = PIXEL_NOISE * rng.standard_normal((size, size))

    broken: set = set()
    if n_breaks:
        picks = break_rng.choice(len(bones), size=min(n_breaks, len(bones)), replace=False)
        broken = set(picks.tolist())

    boxes: List[BoundingBox] = []
    centers: List[Tuple[int, int]] = []
    for index, bone in enumerate(bones):
        distance = yy - bone.line(xx, size)
        profile = bone.brightness(xx, size) * np.exp(-((distance / bone.half_width) ** 2))
        profile *= foramina[index]
        if index in broken:
            placed = _place_break(bone, size, break_rng)
            if placed is not None:
                gx, length, box, center = placed
                profile *= _break_field(size, gx, length, box, break_rng)
                boxes.append(box)
                centers.append(center)
        image += profile

    image += noise
    quantized = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    return quantized.astype(np.float32) / np.float32(255.0), boxes, centers


def _make_sample(task: Tuple[int, int, Tuple[int, int], str, str, int]) -> Sample:
    seed, size, breaks_range, split, kind_value, index = task
    kind = LabelKind(kind_value)
    rng = np.random.default_rng([seed, SPLIT_CODES[split], kind.code, index])
    sample_id = f"{split}-{kind.letter}-{index:05d}"

    if kind is LabelKind.NEGATIVE:
        image, _, _ = render_image(size, rng, 0)
        return Sample(sample_id=sample_id, image=image, label_kind=kind)

    n_breaks = int(rng.integers(breaks_range[0], breaks_range[1] + 1))
    image, boxes, centers = render_image(size, rng, n_breaks)
    attempts = 1
    while not boxes:
        # Rare: no bone had room for a gap; redraw from the same stream.
        if attempts >= 50:
            raise ConfigError(f"could not place a break in a {size}x{size} image")
        image, boxes, centers = render_image(size, rng, n_breaks)
        attempts += 1
    return Sample(
        sample_id=sample_id,
        image=image,
        label_kind=kind,
        boxes=tuple(boxes),
        break_centers=tuple(centers),
    )


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV} must be an integer") from exc


def _build(tasks: List[tuple], workers: int) -> List[Sample]:
    if workers <= 1 or len(tasks) < 2:
        return [_make_sample(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_make_sample, tasks, chunksize=64))


def generate_dataset(spec: DatasetSpec, workers: Optional[int] = None) -> SyntheticDataset:
    """Generate every split of `spec`; deterministic given `spec.seed`."""
    workers = default_workers() if workers is None else workers
    common = (spec.seed, spec.image_size, spec.breaks_per_positive)

    def tasks(split: str, kind: LabelKind, count: int) -> List[tuple]:
        return [(*common, split, kind.value, i) for i in range(count)]

    plan = {
        "region": tasks("train", LabelKind.REGION, spec.n_region),
        "positive": tasks("train", LabelKind.POSITIVE, spec.n_positive_used),
        "negative": tasks("train", LabelKind.NEGATIVE, spec.n_negative),
        "val": tasks("val", LabelKind.POSITIVE, spec.n_val_positive)
        + tasks("val", LabelKind.NEGATIVE, spec.n_val_negative),
        "test": tasks("test", LabelKind.POSITIVE, spec.n_test_positive)
        + tasks("test", LabelKind.NEGATIVE, spec.n_test_negative),
    }
    flat = [t for group in plan.values() for t in group]
    samples = iter(_build(flat, workers))
    built = {name: [next(samples) for _ in group] for name, group in plan.items()}

    dataset = SyntheticDataset(spec=spec, **built)
    logger.info("Generated synthetic dataset %s (seed=%d)", dataset.counts(), spec.seed)
    return dataset


# =============================================================================
# Masks
# =============================================================================

def box_mask(boxes: Iterable[BoundingBox], height: int, width: int) -> np.ndarray:
    """Binary uint8 mask of the union of box interiors."""
    mask = np.zeros((height, width), dtype=np.uint8)
    for box in boxes:
        mask[box.y0 : box.y1, box.x0 : box.x1] = 1
    return mask


def gt_mask_of(sample: Sample) -> np.ndarray:
    """
    Pixel supervision mask for region-labeled and negative samples.

    Image-level positives have no pixel supervision; their targets come
    from the teacher's pseudo-GT instead.
    """
    if sample.label_kind is LabelKind.POSITIVE:
        raise ContractError(
            f"{sample.sample_id}: image-level positive samples have no GT mask; "
            "use the teacher pseudo-GT"
        )
    if sample.label_kind is LabelKind.NEGATIVE:
        return np.zeros((sample.height, sample.width), dtype=np.uint8)
    return box_mask(sample.boxes, sample.height, sample.width)
