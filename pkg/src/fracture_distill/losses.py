"""
Training losses.

- Supervised term: pixel-wise binary cross-entropy against a binary mask
  (box interiors for region-labeled images, all zeros for negatives).
- Semi-supervised term: two-class KL divergence from the sharpened
  teacher pseudo-GT to the student prediction, on image-level positives.
- Total: unweighted sum of the two.

Each per-image loss is a mean over pixels; each term is a mean over the
images of its subset, and an empty subset contributes 0. Probabilities
are clamped to [eps, 1 - eps] and accumulated in float64.
"""

from dataclasses import dataclass
from typing import Dict, Sequence

import torch

from fracture_distill.data.synthetic import LabelKind
from fracture_distill.errors import ConfigError, ContractError, ShapeError
from fracture_distill.model import LossHead
from fracture_distill.sharpening import DEFAULT_EPSILON


def _check_shapes(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.ndim < 2:
        raise ShapeError(f"maps must be at least 2-D, got {tuple(a.shape)}")


def _clamp(p: torch.Tensor, epsilon: float) -> torch.Tensor:
    return p.to(torch.float64).clamp(epsilon, 1.0 - epsilon)


def bce_map(prediction: torch.Tensor, target: torch.Tensor, epsilon: float = DEFAULT_EPSILON) -> torch.Tensor:
    """Per-image mean BCE over the last two dims."""
    _check_shapes(prediction, target)
    p = _clamp(prediction, epsilon)
    y = target.to(torch.float64)
    per_pixel = -(y * torch.log(p) + (1.0 - y) * torch.log1p(-p))
    return per_pixel.mean(dim=(-2, -1))


def kl_map(
    sharpened_pseudo_gt: torch.Tensor,
    student_prediction: torch.Tensor,
    epsilon: float = DEFAULT_EPSILON,
) -> torch.Tensor:
    """Per-image mean two-class KL(pseudo-GT || student) over the last two dims."""
    _check_shapes(sharpened_pseudo_gt, student_prediction)
    q = _clamp(sharpened_pseudo_gt, epsilon)
    p = _clamp(student_prediction, epsilon)
    per_pixel = q * (torch.log(q) - torch.log(p)) + (1.0 - q) * (
        torch.log1p(-q) - torch.log1p(-p)
    )
    return per_pixel.mean(dim=(-2, -1))


def bce_loss(prediction: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean pixel-wise BCE of one map (or the mean over a stack of maps)."""
    return bce_map(prediction, target).mean()


def kl_loss(sharpened_pseudo_gt: torch.Tensor, student_prediction: torch.Tensor) -> torch.Tensor:
    """Mean pixel-wise two-class KL of one map (or the mean over a stack)."""
    return kl_map(sharpened_pseudo_gt, student_prediction).mean()


def bce_head(target: torch.Tensor) -> LossHead:
    """Loss tail for `model.forward_with_gradients`: BCE against `target`."""
    return lambda prediction: bce_loss(prediction, target.to(prediction.dtype))


def kl_head(pseudo_gt: torch.Tensor) -> LossHead:
    """Loss tail for `model.forward_with_gradients`: KL from a fixed pseudo-GT."""
    fixed = pseudo_gt.detach()
    return lambda prediction: kl_loss(fixed.to(prediction.dtype), prediction)


@dataclass
class LossValue:
    """Total loss and its two terms; tensors stay attached to the graph."""

    total: torch.Tensor
    supervised_term: torch.Tensor
    semi_term: torch.Tensor
    pixel_count: int

    def as_dict(self) -> Dict[str, float]:
        return {
            "loss_total": float(self.total.detach()),
            "loss_supervised": float(self.supervised_term.detach()),
            "loss_semi": float(self.semi_term.detach()),
        }


@dataclass
class LossBatch:
    """
    Predictions and targets of one mixed batch.

    `targets[i]` is the binary mask for region-labeled and negative
    samples and the sharpened pseudo-GT for image-level positives.
    """

    predictions: torch.Tensor
    targets: torch.Tensor
    label_kinds: Sequence[LabelKind]

    def __post_init__(self) -> None:
        _check_shapes(self.predictions, self.targets)
        if self.predictions.ndim != 3:
            raise ShapeError(f"expected (B, H, W) maps, got {tuple(self.predictions.shape)}")
        if len(self.label_kinds) != self.predictions.shape[0]:
            raise ShapeError("one label kind per map is required")


def total_loss(batch: LossBatch) -> LossValue:
    """Supervised mean over R and N members plus KL mean over P members."""
    n = len(batch.label_kinds)
    if n == 0:
        raise ConfigError("cannot compute a loss over an empty batch")
    positive = torch.tensor([k is LabelKind.POSITIVE for k in batch.label_kinds])
    supervised = ~positive

    zero = torch.zeros((), dtype=torch.float64)
    if bool(supervised.any()):
        sup_term = bce_map(batch.predictions[supervised], batch.targets[supervised]).mean()
    else:
        sup_term = zero
    if bool(positive.any()):
        if batch.targets.requires_grad:
            raise ContractError("pseudo-GT targets must not require grad")
        semi_term = kl_map(batch.targets[positive], batch.predictions[positive]).mean()
    else:
        semi_term = zero

    h, w = batch.predictions.shape[-2:]
    return LossValue(
        total=sup_term + semi_term,
        supervised_term=sup_term,
        semi_term=semi_term,
        pixel_count=int(n * h * w),
    )
