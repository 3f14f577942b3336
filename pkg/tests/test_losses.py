"""
Tests for the supervised and semi-supervised losses.
"""

import math

import pytest
import torch

from fracture_distill.data.synthetic import LabelKind
from fracture_distill.errors import ConfigError, ContractError, ShapeError
from fracture_distill.losses import (
    LossBatch,
    bce_head,
    bce_loss,
    bce_map,
    kl_head,
    kl_loss,
    kl_map,
    total_loss,
)

R, P, N = LabelKind.REGION, LabelKind.POSITIVE, LabelKind.NEGATIVE


def full(value, shape=(4, 4)):
    return torch.full(shape, value, dtype=torch.float64)


class TestBce:
    """Test the pixel-wise binary cross-entropy."""

    def test_half_probability(self):
        """Test p=0.5 costs ln 2 whatever the target."""
        assert float(bce_loss(full(0.5), full(1.0))) == pytest.approx(math.log(2), abs=1e-9)
        assert float(bce_loss(full(0.5), full(0.0))) == pytest.approx(math.log(2), abs=1e-9)

    def test_confident_mistake(self):
        """Test p=0.1 on a positive pixel costs -ln 0.1."""
        assert float(bce_loss(full(0.1), full(1.0))) == pytest.approx(2.302585, abs=1e-6)
        assert float(bce_loss(full(0.9), full(0.0))) == pytest.approx(2.302585, abs=1e-6)

    def test_clamped_at_extremes(self):
        """Test p=0 on a positive pixel stays finite."""
        value = float(bce_loss(full(0.0), full(1.0)))
        assert math.isfinite(value)
        assert value == pytest.approx(-math.log(1e-6), rel=1e-6)

    def test_per_image_means(self):
        """Test bce_map gives one mean per image of a stack."""
        predictions = torch.stack([full(0.5), full(0.1)])
        targets = torch.ones_like(predictions)
        per_image = bce_map(predictions, targets)
        assert per_image.shape == (2,)
        assert per_image.dtype == torch.float64

    def test_float32_inputs_accumulate_in_float64(self):
        """Test float32 maps still yield a float64 loss."""
        value = bce_loss(full(0.5).float(), full(1.0).float())
        assert value.dtype == torch.float64

    def test_shape_mismatch(self):
        """Test mismatched shapes raise ShapeError."""
        with pytest.raises(ShapeError):
            bce_loss(full(0.5, (4, 4)), full(1.0, (4, 5)))


class TestKl:
    """Test the two-class KL divergence."""

    def test_reference_value(self):
        """Test KL(0.8 || 0.5) against a precomputed value."""
        assert float(kl_loss(full(0.8), full(0.5))) == pytest.approx(0.192745, abs=1e-6)

    def test_zero_when_equal(self):
        """Test KL(q || q) = 0."""
        assert float(kl_loss(full(0.3), full(0.3))) == pytest.approx(0.0, abs=1e-12)

    def test_asymmetric(self):
        """Test KL(0.8 || 0.5) differs from KL(0.5 || 0.8)."""
        forward = float(kl_loss(full(0.8), full(0.5)))
        backward = float(kl_loss(full(0.5), full(0.8)))
        assert backward == pytest.approx(0.223144, abs=1e-6)
        assert forward != pytest.approx(backward, abs=1e-3)

    def test_non_negative(self, rng):
        """Test KL is never negative on random maps."""
        for _ in range(50):
            q = torch.from_numpy(rng.uniform(0, 1, size=(2, 5, 5)))
            p = torch.from_numpy(rng.uniform(0, 1, size=(2, 5, 5)))
            assert torch.all(kl_map(q, p) >= -1e-12)


class TestHeads:
    """Test the loss tails used for gradient checks."""

    def test_bce_head_matches_bce_loss(self):
        """Test bce_head evaluates to bce_loss."""
        target = full(1.0)
        head = bce_head(target)
        assert float(head(full(0.3))) == pytest.approx(float(bce_loss(full(0.3), target)))

    def test_kl_head_detaches_pseudo_gt(self):
        """Test gradients do not flow into the fixed pseudo-GT."""
        pseudo_gt = full(0.7).requires_grad_(True)
        prediction = full(0.4).requires_grad_(True)
        kl_head(pseudo_gt)(prediction).backward()
        assert prediction.grad is not None
        assert pseudo_gt.grad is None


class TestTotalLoss:
    """Test the mixed-batch loss."""

    def _batch(self, kinds, predictions=None, targets=None):
        b = len(kinds)
        return LossBatch(
            predictions=torch.full((b, 4, 4), 0.5, dtype=torch.float64) if predictions is None else predictions,
            targets=torch.ones((b, 4, 4), dtype=torch.float64) if targets is None else targets,
            label_kinds=kinds,
        )

    def test_sum_of_terms(self):
        """Test total = supervised + semi-supervised."""
        targets = torch.stack([full(1.0), full(0.8), full(0.0)])
        loss = total_loss(self._batch([R, P, N], targets=targets))
        assert float(loss.supervised_term) == pytest.approx(math.log(2), abs=1e-9)
        assert float(loss.semi_term) == pytest.approx(0.192745, abs=1e-6)
        assert float(loss.total) == pytest.approx(math.log(2) + 0.192745, abs=1e-6)
        assert loss.pixel_count == 3 * 16

    def test_empty_positive_subset(self):
        """Test a batch with no P members has semi term 0."""
        loss = total_loss(self._batch([R, N]))
        assert float(loss.semi_term) == 0.0

    def test_empty_supervised_subset(self):
        """Test an all-P batch has supervised term 0."""
        loss = total_loss(self._batch([P, P], targets=torch.full((2, 4, 4), 0.5, dtype=torch.float64)))
        assert float(loss.supervised_term) == 0.0
        assert float(loss.semi_term) == pytest.approx(0.0, abs=1e-12)

    def test_subset_means_not_pooled(self):
        """Test each term averages over its own images."""
        predictions = torch.stack([full(0.5), full(0.1), full(0.5)])
        targets = torch.stack([full(1.0), full(1.0), full(0.5)])
        loss = total_loss(self._batch([R, R, P], predictions=predictions, targets=targets))
        expected = (math.log(2) + -math.log(0.1)) / 2
        assert float(loss.supervised_term) == pytest.approx(expected, abs=1e-9)

    def test_as_dict_keys(self):
        """Test the logged loss names."""
        values = total_loss(self._batch([R])).as_dict()
        assert set(values) == {"loss_total", "loss_supervised", "loss_semi"}

    def test_empty_batch(self):
        """Test an empty batch is rejected."""
        with pytest.raises(ConfigError):
            total_loss(self._batch([], predictions=torch.zeros((0, 4, 4)), targets=torch.zeros((0, 4, 4))))

    def test_pseudo_gt_requiring_grad(self):
        """Test pseudo-GT attached to a graph is a contract violation."""
        targets = torch.full((1, 4, 4), 0.6, dtype=torch.float64, requires_grad=True)
        with pytest.raises(ContractError):
            total_loss(self._batch([P], targets=targets))

    def test_kind_count_mismatch(self):
        """Test one label kind per map is required."""
        with pytest.raises(ShapeError):
            self._batch([R], predictions=torch.zeros((2, 4, 4)), targets=torch.zeros((2, 4, 4)))
