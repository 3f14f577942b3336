"""
Classification and localization metrics on probability maps.

Classification: the image score is the map maximum; AUROC is the
Mann-Whitney statistic with ties counted one half.

Localization (modified FROC): at a threshold tau, a ground-truth box is
recalled when the map value at its center pixel is >= tau; every pixel
>= tau outside all boxes of its image is a false positive. Recall is
pooled over all boxes; the false-positive ratio is the per-image
fraction of such pixels, averaged over images. The summary score is the
mean recall at false-positive ratios 1%, 2%, ..., 10%, each read off the
largest achieved ratio not above the target.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import rankdata

from fracture_distill.data.synthetic import BoundingBox, Sample, box_mask
from fracture_distill.errors import ContractError, ShapeError, UndefinedMetricError
from fracture_distill.model import MiniFPN, ModelCheckpoint, predict_maps

logger = logging.getLogger(__name__)

FP_TARGETS = np.linspace(0.01, 0.10, 10)
MAX_EXACT_THRESHOLDS = 10_000
QUANTILE_THRESHOLDS = 1024


# =============================================================================
# Classification
# =============================================================================

def classification_score(probability_map: np.ndarray) -> float:
    """Image-level score: the largest pixel value."""
    return float(np.max(probability_map))


def _check_binary(scores: Sequence[float], labels: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ShapeError("scores and labels must be 1-D sequences of equal length")
    if not np.all(np.isin(y, (0, 1))):
        raise ContractError("labels must be 0 or 1")
    y = y.astype(bool)
    if y.all() or not y.any():
        raise UndefinedMetricError("AUROC needs at least one positive and one negative")
    return s, y


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Rank-based AUROC; equals P(score_pos > score_neg) + 0.5 P(tie)."""
    s, y = _check_binary(scores, labels)
    ranks = rankdata(s, method="average")
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class RocCurve:
    """ROC operating points, one per distinct score, from (0, 0) to (1, 1)."""

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    def points(self) -> List[List[float]]:
        return [[float(f), float(t)] for f, t in zip(self.fpr, self.tpr)]


def roc_curve(scores: Sequence[float], labels: Sequence[int]) -> RocCurve:
    s, y = _check_binary(scores, labels)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # Last index of each run of equal scores.
    cut = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp = np.cumsum(y)[cut]
    fp = np.cumsum(~y)[cut]
    return RocCurve(
        fpr=np.r_[0.0, fp / fp[-1]],
        tpr=np.r_[0.0, tp / tp[-1]],
        thresholds=np.r_[np.inf, s[cut]],
    )


# =============================================================================
# Localization
# =============================================================================

def box_center(box: BoundingBox) -> Tuple[int, int]:
    """Lower-median interior pixel (x, y) of a box."""
    return (box.x0 + box.x1 - 1) // 2, (box.y0 + box.y1 - 1) // 2


@dataclass(eq=False)
class EvalRecord:
    """A scored image with its ground-truth boxes (possibly none)."""

    sample_id: str
    probability_map: np.ndarray
    boxes: Tuple[BoundingBox, ...] = ()
    image_level_label: int = 0

    def __post_init__(self) -> None:
        self.boxes = tuple(self.boxes)
        if self.probability_map.ndim != 2:
            raise ShapeError(f"{self.sample_id}: probability map must be 2-D")
        h, w = self.probability_map.shape
        for box in self.boxes:
            if not box.fits(w, h):
                raise ShapeError(f"{self.sample_id}: box {box} lies outside the map")

    @classmethod
    def from_sample(cls, sample: Sample, probability_map: np.ndarray) -> "EvalRecord":
        return cls(
            sample_id=sample.sample_id,
            probability_map=probability_map,
            boxes=sample.boxes,
            image_level_label=int(sample.is_positive),
        )

    def center_values(self) -> np.ndarray:
        return np.array(
            [self.probability_map[y, x] for x, y in map(box_center, self.boxes)],
            dtype=np.float64,
        )

    def outside_values(self) -> np.ndarray:
        h, w = self.probability_map.shape
        inside = box_mask(self.boxes, h, w).astype(bool)
        return np.asarray(self.probability_map, dtype=np.float64)[~inside]


@dataclass(frozen=True)
class FrocCurve:
    """(fp_ratio, recall) per threshold, in descending-threshold order."""

    thresholds: np.ndarray
    fp_ratios: np.ndarray
    recalls: np.ndarray
    score: float

    @property
    def points(self) -> List[Tuple[float, float]]:
        return [(float(f), float(r)) for f, r in zip(self.fp_ratios, self.recalls)]

    def recall_at(self, fp_ratio: float) -> float:
        """Recall at the largest achieved ratio <= fp_ratio; 0 if none."""
        reachable = self.fp_ratios <= fp_ratio
        if not reachable.any():
            return 0.0
        return float(self.recalls[reachable].max())


def default_thresholds(records: Sequence[EvalRecord]) -> np.ndarray:
    """Every distinct map value when there are few, else evenly spaced quantiles; descending."""
    values = np.concatenate([np.ravel(r.probability_map) for r in records]).astype(np.float64)
    distinct = np.unique(values)
    if distinct.size <= MAX_EXACT_THRESHOLDS:
        return distinct[::-1].copy()
    quantiles = np.quantile(values, np.linspace(1.0, 0.0, QUANTILE_THRESHOLDS))
    return np.unique(quantiles)[::-1].copy()


def _count_at_least(sorted_values: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    return sorted_values.size - np.searchsorted(sorted_values, thresholds, side="left")


def froc_curve(
    records: Sequence[EvalRecord], thresholds: Optional[Sequence[float]] = None
) -> FrocCurve:
    """Modified FROC curve of `records` at descending `thresholds`."""
    if len(records) == 0:
        raise UndefinedMetricError("FROC needs at least one record")
    total_boxes = sum(len(r.boxes) for r in records)
    if total_boxes == 0:
        raise UndefinedMetricError("FROC needs at least one ground-truth box")

    taus = default_thresholds(records) if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    if taus.ndim != 1 or taus.size == 0:
        raise ContractError("thresholds must be a non-empty 1-D sequence")
    if np.any(np.diff(taus) > 0):
        raise ContractError("thresholds must be sorted in descending order")

    recalled = np.zeros(taus.size, dtype=np.int64)
    fp_sum = np.zeros(taus.size, dtype=np.float64)
    for record in records:
        if record.boxes:
            recalled += _count_at_least(np.sort(record.center_values()), taus)
        outside = np.sort(record.outside_values())
        fp_sum += _count_at_least(outside, taus) / record.probability_map.size

    recalls = recalled / total_boxes
    fp_ratios = fp_sum / len(records)
    curve = FrocCurve(thresholds=taus, fp_ratios=fp_ratios, recalls=recalls, score=0.0)
    score = float(np.mean([curve.recall_at(t) for t in FP_TARGETS]))
    return FrocCurve(thresholds=taus, fp_ratios=fp_ratios, recalls=recalls, score=score)


def froc_score(records: Sequence[EvalRecord], thresholds: Optional[Sequence[float]] = None) -> float:
    return froc_curve(records, thresholds).score


# =============================================================================
# Evaluation of a model on a split
# =============================================================================

@dataclass
class EvaluationReport:
    """Classification and localization metrics of one model on one split."""

    auroc: float
    froc_score: float
    n_samples: int
    froc: Optional[FrocCurve] = field(default=None, repr=False)
    roc: Optional[RocCurve] = field(default=None, repr=False)

    def to_dict(self) -> Dict[str, object]:
        return {
            "auroc": self.auroc,
            "froc_score": self.froc_score,
            "n_samples": self.n_samples,
            "curve": [list(p) for p in self.froc.points] if self.froc else [],
            "roc": self.roc.points() if self.roc else [],
        }


def evaluate(
    model: Union[ModelCheckpoint, MiniFPN],
    samples: Sequence[Sample],
    thresholds: Optional[Sequence[float]] = None,
) -> EvaluationReport:
    """
    Score `samples` with `model`.

    AUROC needs both classes; FROC needs at least one box. A metric that
    is undefined on this split is reported as NaN.
    """
    maps = predict_maps(model, [s.image for s in samples])
    records = [EvalRecord.from_sample(s, m) for s, m in zip(samples, maps)]
    scores = [classification_score(r.probability_map) for r in records]
    labels = [r.image_level_label for r in records]

    auc, roc = float("nan"), None
    try:
        auc = auroc(scores, labels)
        roc = roc_curve(scores, labels)
    except UndefinedMetricError as exc:
        logger.warning("AUROC undefined: %s", exc)

    froc_value, froc = float("nan"), None
    try:
        froc = froc_curve(records, thresholds)
        froc_value = froc.score
    except UndefinedMetricError as exc:
        logger.warning("FROC undefined: %s", exc)

    return EvaluationReport(
        auroc=auc, froc_score=froc_value, n_samples=len(records), froc=froc, roc=roc
    )
