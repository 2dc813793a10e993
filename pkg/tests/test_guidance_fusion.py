"""確率マップ誘導と融合方式のテスト."""

import numpy as np
import pytest
import torch

from config.experiment import FusionSpec
from src.classification.fusion import (
    GatedFusion,
    added_parameters,
    build_fusion_head,
    fuse_features,
    fuse_weighted,
    fusion_parameter_table,
    is_simplex,
)
from src.classification.guidance import apply_guidance
from src.networks import count_parameters


def test_guidance_hand_value():
    out = apply_guidance(np.array([0.8]), np.array([0.5]), 0.5)
    assert out[0] == pytest.approx(0.6)


def test_guidance_limits():
    rng = np.random.default_rng(0)
    x = rng.random((8, 8))
    p = rng.random((8, 8))
    np.testing.assert_array_equal(apply_guidance(x, p, 0.0), x)
    np.testing.assert_allclose(apply_guidance(x, p, 1.0), x * p)
    np.testing.assert_allclose(apply_guidance(x, np.ones_like(x), 0.7), x)


def test_guidance_is_monotone_in_probability():
    x = np.full(5, 0.9)
    p = np.linspace(0.0, 1.0, 5)
    out = apply_guidance(x, p, 0.5)
    assert np.all(np.diff(out) > 0)
    assert out.min() >= 0.0
    assert out.max() <= 1.0


def test_guidance_on_tensors():
    x = torch.rand(2, 1, 4, 4)
    p = torch.zeros_like(x)
    assert torch.allclose(apply_guidance(x, p, 0.25), 0.75 * x)


def test_guidance_validation():
    with pytest.raises(ValueError):
        apply_guidance(np.zeros(3), np.zeros(3), 1.5)
    with pytest.raises(ValueError):
        apply_guidance(np.zeros(3), np.zeros(4), 0.5)


def test_weighted_fusion_hand_value():
    y_r = torch.tensor([0.6, 0.3, 0.1], dtype=torch.float64)
    y_s = torch.tensor([0.2, 0.5, 0.3], dtype=torch.float64)
    y_f = fuse_weighted(y_r, y_s, 0.7)
    assert torch.allclose(y_f, torch.tensor([0.48, 0.36, 0.16], dtype=torch.float64))
    assert torch.equal(fuse_weighted(y_r, y_s, 1.0), y_r)
    assert is_simplex(y_f.numpy())


def test_weighted_fusion_validation():
    y = torch.tensor([0.5, 0.5, 0.0])
    with pytest.raises(ValueError):
        fuse_weighted(y, y, 1.2)
    with pytest.raises(ValueError):
        fuse_weighted(y, torch.tensor([0.5, 0.5]), 0.5)
    with pytest.raises(ValueError):
        fuse_weighted(y, torch.tensor([0.5, 0.6, 0.0]), 0.5)


def test_added_parameter_table():
    table = fusion_parameter_table(8, 3)
    assert table["weighted_logits"] == 0
    assert table["sum"] == 0
    assert table["gated"] == 1
    assert table["concat"] == 24
    assert table["se"] > table["concat"]
    assert table["cross_attention"] > 0


@pytest.mark.parametrize("feature_dim, n_cls", [(8, 3), (16, 3), (5, 4)])
def test_concat_cost_is_one_extra_weight_block(feature_dim, n_cls):
    spec = FusionSpec(kind="concat")
    head = build_fusion_head(spec, feature_dim, n_cls)
    reference = feature_dim * n_cls + n_cls
    assert count_parameters(head) == 2 * feature_dim * n_cls + n_cls
    assert added_parameters(spec, feature_dim, n_cls) == count_parameters(head) - reference == feature_dim * n_cls


@pytest.mark.parametrize("kind", ["concat", "sum", "gated", "se", "cross_attention"])
def test_feature_fusion_heads_produce_logits(kind):
    head = build_fusion_head(FusionSpec(kind=kind), 8, 3, seed=0)
    f_r, f_s = torch.rand(4, 8), torch.rand(4, 8)
    assert fuse_features(f_r, f_s, head).shape == (4, 3)


def test_weighted_kind_has_no_head():
    assert build_fusion_head(FusionSpec(kind="weighted_logits"), 8, 3) is None


def test_gated_fusion_starts_balanced_and_saturates():
    head = build_fusion_head(FusionSpec(kind="gated"), 8, 3, seed=0)
    assert isinstance(head, GatedFusion)
    assert float(head.lam) == pytest.approx(0.5)

    f_r, f_s = torch.rand(2, 8), torch.rand(2, 8)
    with torch.no_grad():
        head.gate.fill_(60.0)
    assert torch.allclose(head(f_r, f_s), head.head(f_r))
    with torch.no_grad():
        head.gate.fill_(-60.0)
    assert torch.allclose(head(f_r, f_s), head.head(f_s))


def test_feature_dimension_mismatch():
    head = build_fusion_head(FusionSpec(kind="concat"), 8, 3)
    with pytest.raises(ValueError):
        fuse_features(torch.rand(2, 8), torch.rand(2, 6), head)
    with pytest.raises(ValueError):
        head(torch.rand(2, 6), torch.rand(2, 6))


def test_guidance_and_fusion_match_reference_on_random_fixtures():
    rng = np.random.default_rng(42)
    for _ in range(100):
        x = rng.random((6, 6))
        p = rng.random((6, 6))
        gamma = float(rng.random())
        expected = np.clip((1 - gamma) * x + gamma * x * p, 0.0, 1.0)
        np.testing.assert_allclose(apply_guidance(x, p, gamma), expected, atol=1e-12)

        y_r = rng.dirichlet(np.ones(3))
        y_s = rng.dirichlet(np.ones(3))
        beta = float(rng.random())
        fused = fuse_weighted(torch.from_numpy(y_r), torch.from_numpy(y_s), beta).numpy()
        np.testing.assert_allclose(fused, beta * y_r + (1 - beta) * y_s, atol=1e-12)
        assert is_simplex(fused)
