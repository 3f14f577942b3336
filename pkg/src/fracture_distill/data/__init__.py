"""Synthetic data: generation, masks and augmentation. On-disk I/O lives in `data.storage`."""

from fracture_distill.data.augment import AugmentConfig, AugmentParams, augment
from fracture_distill.data.synthetic import (
    BoundingBox,
    DatasetSpec,
    LabelKind,
    Sample,
    SyntheticDataset,
    box_mask,
    generate_dataset,
    gt_mask_of,
)

__all__ = [
    "AugmentConfig",
    "AugmentParams",
    "BoundingBox",
    "DatasetSpec",
    "LabelKind",
    "Sample",
    "SyntheticDataset",
    "augment",
    "box_mask",
    "generate_dataset",
    "gt_mask_of",
]
