"""
Tests for AUROC and the modified FROC.
"""

import itertools
import math

import numpy as np
import pytest

from fracture_distill.data.synthetic import BoundingBox, box_mask
from fracture_distill.errors import ContractError, ShapeError, UndefinedMetricError
from fracture_distill.metrics import (
    FP_TARGETS,
    EvalRecord,
    EvaluationReport,
    auroc,
    box_center,
    classification_score,
    default_thresholds,
    evaluate,
    froc_curve,
    froc_score,
    roc_curve,
)
from fracture_distill.model import init_parameters


def brute_force_auroc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def brute_force_froc(records):
    taus = sorted({float(v) for r in records for v in np.ravel(r.probability_map)}, reverse=True)
    total = sum(len(r.boxes) for r in records)
    points = []
    for tau in taus:
        hits = 0
        fp = 0.0
        for r in records:
            for box in r.boxes:
                x, y = box_center(box)
                hits += r.probability_map[y, x] >= tau
            outside = ~box_mask(r.boxes, *r.probability_map.shape).astype(bool)
            fp += np.count_nonzero((r.probability_map >= tau) & outside) / r.probability_map.size
        points.append((fp / len(records), hits / total))
    score = 0.0
    for target in FP_TARGETS:
        reachable = [recall for fp, recall in points if fp <= target]
        score += max(reachable) if reachable else 0.0
    return score / len(FP_TARGETS)


def random_record(rng, index, size=12, with_boxes=True):
    values = np.round(rng.uniform(0, 1, size=(size, size)), 2)
    boxes = ()
    if with_boxes:
        boxes = []
        for _ in range(int(rng.integers(1, 3))):
            x0, y0 = (int(v) for v in rng.integers(0, size - 3, size=2))
            boxes.append(BoundingBox(x0, y0, x0 + int(rng.integers(1, 4)), y0 + int(rng.integers(1, 4))))
    return EvalRecord(sample_id=f"r{index}", probability_map=values, boxes=tuple(boxes))


class TestAuroc:
    """Test the classification metric."""

    def test_matches_brute_force(self, rng):
        """Test rank AUROC equals the pairwise definition, ties included."""
        for _ in range(50):
            n = int(rng.integers(2, 201))
            labels = rng.integers(0, 2, size=n)
            labels[0], labels[1] = 0, 1
            scores = np.round(rng.uniform(0, 1, size=n), 1)
            assert auroc(scores, labels) == pytest.approx(brute_force_auroc(scores, labels), abs=1e-12)

    def test_perfect_and_reversed(self):
        """Test a perfect ranking gives 1 and a reversed one 0."""
        assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert auroc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0

    def test_all_tied(self):
        """Test constant scores give 0.5."""
        assert auroc([0.3] * 4, [0, 1, 0, 1]) == 0.5

    @pytest.mark.parametrize(
        "transform", [np.exp, lambda s: s**3, lambda s: np.log(s + 1e-3), lambda s: 5.0 * s - 2.0]
    )
    def test_invariant_under_monotone_transform(self, rng, transform):
        """Test AUROC depends only on the ranking of scores."""
        for _ in range(20):
            labels = rng.integers(0, 2, size=60)
            labels[0], labels[1] = 0, 1
            scores = np.round(rng.uniform(0, 1, size=60), 2)
            assert auroc(transform(scores), labels) == pytest.approx(auroc(scores, labels), abs=1e-12)

    def test_single_class_undefined(self):
        """Test one-class inputs raise UndefinedMetricError."""
        with pytest.raises(UndefinedMetricError):
            auroc([0.1, 0.2], [1, 1])

    def test_non_binary_labels(self):
        """Test labels other than 0/1 are rejected."""
        with pytest.raises(ContractError):
            auroc([0.1, 0.2], [0, 2])

    def test_length_mismatch(self):
        """Test scores and labels must align."""
        with pytest.raises(ShapeError):
            auroc([0.1, 0.2, 0.3], [0, 1])

    def test_classification_score_is_max(self):
        """Test the image score is the map maximum."""
        assert classification_score(np.array([[0.1, 0.7], [0.3, 0.2]])) == 0.7


class TestRocCurve:
    """Test ROC operating points."""

    def test_endpoints(self):
        """Test the curve runs from (0, 0) to (1, 1)."""
        curve = roc_curve([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
        assert (curve.fpr[0], curve.tpr[0]) == (0.0, 0.0)
        assert (curve.fpr[-1], curve.tpr[-1]) == (1.0, 1.0)
        assert np.all(np.diff(curve.fpr) >= 0) and np.all(np.diff(curve.tpr) >= 0)

    def test_area_equals_auroc(self, rng):
        """Test trapezoidal area under the points equals AUROC."""
        scores = np.round(rng.uniform(0, 1, size=40), 1)
        labels = np.r_[np.zeros(20, dtype=int), np.ones(20, dtype=int)]
        curve = roc_curve(scores, labels)
        area = float(np.sum(np.diff(curve.fpr) * (curve.tpr[1:] + curve.tpr[:-1]) / 2))
        assert area == pytest.approx(auroc(scores, labels), abs=1e-12)


class TestBoxCenter:
    """Test the center-pixel convention."""

    @pytest.mark.parametrize(
        "box, center",
        [
            (BoundingBox(0, 0, 1, 1), (0, 0)),
            (BoundingBox(2, 4, 5, 7), (3, 5)),
            (BoundingBox(2, 4, 6, 8), (3, 5)),
            (BoundingBox(10, 0, 13, 2), (11, 0)),
        ],
    )
    def test_lower_median(self, box, center):
        """Test the lower-median interior pixel is chosen."""
        assert box_center(box) == center
        assert box.contains(*center)


class TestFroc:
    """Test the modified FROC."""

    def test_matches_brute_force(self, rng):
        """Test the curve score equals a direct evaluation at every distinct threshold."""
        for trial in range(30):
            records = [random_record(rng, i, with_boxes=bool(i % 3)) for i in range(5)]
            assert froc_score(records) == pytest.approx(brute_force_froc(records), abs=1e-12)

    def test_perfect_detector(self):
        """Test a map firing only at box centers scores 1."""
        box = BoundingBox(3, 3, 6, 6)
        values = np.zeros((16, 16))
        values[4, 4] = 1.0
        record = EvalRecord("a", values, (box,))
        assert froc_score([record]) == 1.0

    def test_all_zero_maps(self):
        """Test an all-zero map scores 0 (every outside pixel fires at tau=0)."""
        record = EvalRecord("a", np.zeros((16, 16)), (BoundingBox(3, 3, 6, 6),))
        assert froc_score([record]) == 0.0

    def test_recall_is_pooled_over_boxes(self):
        """Test recall counts boxes, not images."""
        values = np.zeros((20, 20))
        values[1, 1] = 1.0
        record = EvalRecord("a", values, (BoundingBox(0, 0, 3, 3), BoundingBox(10, 10, 13, 13)))
        negative = EvalRecord("b", np.zeros((20, 20)))
        curve = froc_curve([record, negative], thresholds=[1.0])
        assert curve.recalls[0] == 0.5
        assert curve.fp_ratios[0] == 0.0

    def test_fp_ratio_is_per_image_mean(self):
        """Test the false-positive ratio averages per-image fractions."""
        small = np.zeros((2, 2))
        small[0, 0] = 1.0
        large = np.zeros((4, 4))
        boxed = EvalRecord("a", np.zeros((4, 4)), (BoundingBox(0, 0, 1, 1),))
        curve = froc_curve(
            [EvalRecord("s", small), EvalRecord("l", large), boxed], thresholds=[0.5]
        )
        assert curve.fp_ratios[0] == pytest.approx((0.25 + 0.0 + 0.0) / 3)

    def test_recall_at_unreachable_target(self):
        """Test recall at a target below every achieved ratio is 0."""
        record = EvalRecord("a", np.ones((4, 4)), (BoundingBox(0, 0, 1, 1),))
        curve = froc_curve([record])
        assert curve.recall_at(0.01) == 0.0

    def test_no_records(self):
        """Test an empty record list is undefined."""
        with pytest.raises(UndefinedMetricError):
            froc_curve([])

    def test_no_boxes(self):
        """Test records without boxes are undefined."""
        with pytest.raises(UndefinedMetricError):
            froc_curve([EvalRecord("a", np.zeros((4, 4)))])

    def test_thresholds_must_descend(self):
        """Test ascending thresholds are rejected."""
        record = EvalRecord("a", np.zeros((4, 4)), (BoundingBox(0, 0, 1, 1),))
        with pytest.raises(ContractError):
            froc_curve([record], thresholds=[0.1, 0.5])

    def test_box_outside_map(self):
        """Test a box beyond the map is a shape error."""
        with pytest.raises(ShapeError):
            EvalRecord("a", np.zeros((4, 4)), (BoundingBox(2, 2, 6, 3),))


class TestDefaultThresholds:
    """Test the threshold grid."""

    def test_distinct_values_descending(self):
        """Test few values give every distinct value in descending order."""
        record = EvalRecord("a", np.array([[0.2, 0.5], [0.5, 0.1]]))
        np.testing.assert_array_equal(default_thresholds([record]), [0.5, 0.2, 0.1])

    def test_quantiles_for_many_values(self, rng):
        """Test large maps fall back to at most 1024 quantiles."""
        record = EvalRecord("a", rng.uniform(0, 1, size=(128, 128)))
        taus = default_thresholds([record])
        assert taus.size <= 1024
        assert np.all(np.diff(taus) < 0)


class TestEvaluate:
    """Test model evaluation on a split."""

    def test_report_fields(self, tiny_dataset, tiny_arch):
        """Test evaluate returns finite metrics in [0, 1] on a mixed split."""
        report = evaluate(init_parameters(tiny_arch, seed=0), tiny_dataset.test)
        assert isinstance(report, EvaluationReport)
        assert report.n_samples == len(tiny_dataset.test)
        assert 0.0 <= report.auroc <= 1.0
        assert 0.0 <= report.froc_score <= 1.0
        payload = report.to_dict()
        assert set(payload) == {"auroc", "froc_score", "n_samples", "curve", "roc"}

    def test_single_class_split_gives_nan(self, tiny_dataset, tiny_arch):
        """Test undefined metrics are reported as NaN."""
        negatives = [s for s in tiny_dataset.test if not s.is_positive]
        report = evaluate(init_parameters(tiny_arch, seed=0), negatives)
        assert math.isnan(report.auroc)
        assert math.isnan(report.froc_score)
