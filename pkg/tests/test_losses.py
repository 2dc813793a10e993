"""損失関数のテスト."""

import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from src.errors import EmptyRegionWarning, ProbabilityFloorWarning
from src.metrics.losses import (
    dice_loss,
    focal_loss,
    inverse_frequency_weights,
    masked_seg_loss,
    pixel_cross_entropy,
    seg_base_loss,
)


def test_dice_loss_hand_values():
    pred = torch.tensor([0.5, 0.5, 0.0, 0.0])
    target = torch.tensor([1, 0, 0, 0])
    assert float(dice_loss(pred, target, eps=0.0)) == pytest.approx(0.5)
    assert float(dice_loss(target.float(), target)) == pytest.approx(0.0, abs=1e-7)
    # 両方空なら ε により 0
    assert float(dice_loss(torch.zeros(4), torch.zeros(4))) == pytest.approx(0.0)


def test_dice_loss_shape_mismatch():
    with pytest.raises(ValueError):
        dice_loss(torch.zeros(4), torch.zeros(5))


def test_seg_base_loss_accepts_unbatched_inputs():
    logits = torch.randn(2, 2, 4, 4, generator=torch.Generator().manual_seed(0))
    target = (torch.rand(2, 4, 4, generator=torch.Generator().manual_seed(1)) > 0.5).long()
    single = seg_base_loss(logits[0], target[0])
    batched = seg_base_loss(logits[:1], target[:1])
    assert torch.allclose(single, batched)
    with pytest.raises(ValueError):
        pixel_cross_entropy(torch.randn(1, 3, 4, 4), target[:1])


def test_focal_loss_hand_value():
    probs = torch.tensor([[0.7, 0.2, 0.1]], dtype=torch.float64)
    loss = focal_loss(probs, torch.tensor([0]), focusing=2.0)
    assert float(loss) == pytest.approx(-0.09 * math.log(0.7), rel=1e-12)


def test_focal_loss_without_focusing_is_cross_entropy():
    g = torch.Generator().manual_seed(0)
    probs = torch.softmax(torch.randn(6, 3, generator=g, dtype=torch.float64), dim=1)
    target = torch.tensor([0, 1, 2, 2, 1, 0])
    expected = F.nll_loss(torch.log(probs), target)
    assert torch.allclose(focal_loss(probs, target, focusing=0.0), expected)


def test_focal_loss_class_weights():
    probs = torch.tensor([[0.5, 0.25, 0.25], [0.25, 0.5, 0.25]], dtype=torch.float64)
    target = torch.tensor([0, 1])
    plain = focal_loss(probs, target)
    weighted = focal_loss(probs, target, class_weights=torch.tensor([2.0, 0.0, 1.0]))
    # 両サンプルの損失は等しいので重み平均は (2+0)/2 倍
    assert float(weighted) == pytest.approx(float(plain))
    only_first = focal_loss(probs, target, class_weights=torch.tensor([1.0, 0.0, 0.0]))
    assert float(only_first) == pytest.approx(float(plain) / 2)


def test_focal_loss_floor_warns_and_stays_finite():
    probs = torch.tensor([[1.0, 0.0, 0.0]], dtype=torch.float64)
    with pytest.warns(ProbabilityFloorWarning):
        loss = focal_loss(probs, torch.tensor([1]))
    assert math.isfinite(float(loss))
    assert float(loss) == pytest.approx(-math.log(1e-8) * (1 - 1e-8) ** 2)


def test_focal_loss_validation():
    probs = torch.full((2, 3), 1 / 3)
    with pytest.raises(ValueError):
        focal_loss(probs, torch.tensor([0, 3]))
    with pytest.raises(ValueError):
        focal_loss(probs, torch.tensor([0]))
    with pytest.raises(ValueError):
        focal_loss(probs, torch.tensor([0, 1]), focusing=-1.0)


def test_focal_loss_gradients():
    logits = torch.randn(4, 3, dtype=torch.float64, requires_grad=True)
    target = torch.tensor([0, 1, 2, 1])
    assert torch.autograd.gradcheck(lambda z: focal_loss(torch.softmax(z, dim=1), target), (logits,))


def _seg_fixture(seed: int = 0):
    g = torch.Generator().manual_seed(seed)
    logits = torch.randn(2, 2, 6, 6, generator=g, dtype=torch.float64)
    target = (torch.rand(2, 6, 6, generator=g) > 0.5).long()
    region = torch.zeros(2, 6, 6, dtype=torch.long)
    region[:, 1:4, 2:5] = 1
    return logits, target, region


def test_masked_loss_ignores_pixels_outside_region():
    logits, target, region = _seg_fixture()
    base = masked_seg_loss(logits, target, region)

    outside = region == 0
    other_logits = torch.where(outside.unsqueeze(1), torch.full_like(logits, 50.0), logits)
    other_target = torch.where(outside, 1 - target, target)
    assert torch.allclose(masked_seg_loss(other_logits, other_target, region), base)


def test_masked_loss_full_region_matches_base_loss():
    logits, target, _ = _seg_fixture(1)
    full = torch.ones_like(target)
    assert torch.allclose(masked_seg_loss(logits, target, full), seg_base_loss(logits, target))


def test_masked_loss_empty_region():
    logits, target, _ = _seg_fixture(2)
    logits.requires_grad_(True)
    with pytest.warns(EmptyRegionWarning):
        loss = masked_seg_loss(logits, target, torch.zeros_like(target))
    assert float(loss) == 0.0
    loss.backward()
    assert torch.count_nonzero(logits.grad) == 0


def test_masked_loss_gradients():
    logits, target, region = _seg_fixture(3)
    logits.requires_grad_(True)
    assert torch.autograd.gradcheck(lambda z: masked_seg_loss(z, target, region), (logits,))


def test_inverse_frequency_weights():
    np.testing.assert_allclose(inverse_frequency_weights([0, 0, 1], 3), [0.5, 1.0, 1.0])
    np.testing.assert_allclose(inverse_frequency_weights([0, 1, 2], 3), [1.0, 1.0, 1.0])


def test_losses_match_numpy_reference_on_random_fixtures():
    rng = np.random.default_rng(123)
    for _ in range(100):
        pred = rng.random((5, 5))
        target = (rng.random((5, 5)) > 0.5).astype(np.int64)
        expected_dice = 1 - (2 * (pred * target).sum() + 1e-5) / (pred.sum() + target.sum() + 1e-5)
        got = dice_loss(torch.from_numpy(pred), torch.from_numpy(target))
        assert float(got) == pytest.approx(expected_dice, abs=1e-9)

        logits = rng.normal(size=(1, 2, 5, 5))
        log_probs = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        expected_ce = -np.take_along_axis(log_probs, target[None, None], axis=1).mean()
        got = pixel_cross_entropy(torch.from_numpy(logits), torch.from_numpy(target[None]))
        assert float(got) == pytest.approx(expected_ce, abs=1e-9)

        probs = rng.dirichlet(np.ones(3), size=4)
        labels = rng.integers(0, 3, size=4)
        p_t = probs[np.arange(4), labels]
        expected_focal = np.mean(-((1 - p_t) ** 2) * np.log(p_t))
        got = focal_loss(torch.from_numpy(probs), torch.from_numpy(labels))
        assert float(got) == pytest.approx(expected_focal, abs=1e-9)
