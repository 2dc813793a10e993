"""ネットワーク構築とチェックポイント形式のテスト."""

import pytest
import torch
from torch.func import functional_call

from config.experiment import ClassifierConfig, SegNetConfig
from src.networks import (
    CheckpointError,
    ParamVector,
    available_backbones,
    build_classifier,
    build_segnet,
    check_backbone_name,
    checkpoint_bytes,
    count_parameters,
    load_checkpoint,
    parse_checkpoint,
    save_checkpoint,
)

SMALL_SEG = SegNetConfig(depth=2, base_width=4)


def _small_classifier(name: str) -> ClassifierConfig:
    return ClassifierConfig(backbone_name=name, width_scale=0.25, blocks=(1, 1))


def test_unet_keeps_resolution():
    net = build_segnet(SMALL_SEG, seed=0).eval()
    out = net(torch.rand(2, 1, 16, 16))
    assert out.shape == (2, 2, 16, 16)


def test_unet_rejects_indivisible_input():
    net = build_segnet(SMALL_SEG, seed=0)
    with pytest.raises(ValueError, match="divisible"):
        net(torch.rand(1, 1, 18, 18))
    with pytest.raises(ValueError):
        build_segnet(SMALL_SEG, seed=0, image_side=30)


def test_construction_is_seeded_and_leaves_global_rng_alone():
    torch.manual_seed(123)
    before = torch.rand(1)
    torch.manual_seed(123)
    a = build_segnet(SMALL_SEG, seed=4)
    after = torch.rand(1)
    b = build_segnet(SMALL_SEG, seed=4)
    c = build_segnet(SMALL_SEG, seed=5)
    assert torch.equal(before, after)
    assert torch.equal(ParamVector.from_module(a).values, ParamVector.from_module(b).values)
    assert not torch.equal(ParamVector.from_module(a).values, ParamVector.from_module(c).values)


@pytest.mark.parametrize("name", ["densenet-like", "resnet-like", "plain-cnn"])
def test_backbones_output_class_logits(name):
    net = build_classifier(_small_classifier(name), seed=0).eval()
    x = torch.rand(3, 1, 32, 32)
    assert net(x).shape == (3, 3)
    assert net.features(x).shape == (3, net.feature_dim)


def test_backbone_registry():
    assert {"densenet-like", "resnet-like", "plain-cnn"} <= set(available_backbones())
    with pytest.raises(ValueError, match="Unknown backbone"):
        check_backbone_name("vgg")
    with pytest.raises(ValueError):
        build_classifier(_small_classifier("vgg"))


def test_param_vector_length_matches_parameter_count():
    net = build_classifier(_small_classifier("resnet-like"), seed=1)
    vec = ParamVector.from_module(net)
    assert len(vec) == count_parameters(net)

    other = build_classifier(_small_classifier("resnet-like"), seed=2)
    vec.assign_to(other)
    assert torch.equal(ParamVector.from_module(other).values, vec.values)


def test_segnet_gradients_match_finite_differences():
    net = build_segnet(SMALL_SEG, seed=0).double().eval()
    x = torch.rand(1, 1, 4, 4, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda t: net(t).sum(dim=(2, 3)), (x,), eps=1e-6, atol=1e-4)


@pytest.mark.parametrize("name", available_backbones())
def test_classifier_gradients_match_finite_differences(name):
    net = build_classifier(_small_classifier(name), seed=0).double().eval()
    x = torch.rand(1, 1, 16, 16, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(net, (x,), eps=1e-6, atol=1e-4)


def _parameter_gradcheck(net: torch.nn.Module, x: torch.Tensor, names: list[str]) -> bool:
    params = {n: p.detach() for n, p in net.named_parameters()}
    checked = tuple(params[n].clone().requires_grad_(True) for n in names)

    def forward(*values: torch.Tensor) -> torch.Tensor:
        return functional_call(net, {**params, **dict(zip(names, values, strict=True))}, (x,))

    return torch.autograd.gradcheck(forward, checked, eps=1e-6, atol=1e-4)


@pytest.mark.parametrize("name", available_backbones())
def test_classifier_parameter_gradients_match_finite_differences(name):
    net = build_classifier(_small_classifier(name), seed=0).double().eval()
    first = next(n for n, p in net.named_parameters() if p.dim() == 4)
    x = torch.rand(2, 1, 16, 16, dtype=torch.float64)
    assert _parameter_gradcheck(net, x, [first, "head.weight", "head.bias"])


def test_segnet_parameter_gradients_match_finite_differences():
    net = build_segnet(SMALL_SEG, seed=0).double().eval()
    last = [n for n, p in net.named_parameters() if p.dim() == 4][-1]
    x = torch.rand(1, 1, 4, 4, dtype=torch.float64)
    assert _parameter_gradcheck(net, x, [last])


def test_checkpoint_round_trip_is_byte_identical(tmp_path):
    net = build_segnet(SMALL_SEG, seed=3)
    config = {"segnet": SMALL_SEG.model_dump(mode="json")}
    path = save_checkpoint(net, tmp_path / "a.ckpt", "segnet", config, seed=3, iteration=7, extra={"dsc": 0.5})

    ckpt = load_checkpoint(path, kind="segnet")
    assert ckpt.iteration == 7
    assert ckpt.extra == {"dsc": 0.5}
    assert ckpt.config == config

    restored = ckpt.restore(build_segnet(SMALL_SEG, seed=99))
    again = save_checkpoint(restored, tmp_path / "b.ckpt", "segnet", config, seed=3, iteration=7, extra={"dsc": 0.5})
    assert path.read_bytes() == again.read_bytes()

    x = torch.rand(1, 1, 8, 8)
    net.eval()
    restored.eval()
    assert torch.equal(net(x), restored(x))


def test_checkpoint_rejects_corruption(tmp_path):
    net = build_segnet(SMALL_SEG, seed=0)
    data = checkpoint_bytes(net, "segnet", {}, seed=0, iteration=0)
    with pytest.raises(CheckpointError, match="magic"):
        parse_checkpoint(b"XXXXXXX" + data[7:])
    with pytest.raises(CheckpointError):
        parse_checkpoint(data[:-4])
    with pytest.raises(CheckpointError):
        parse_checkpoint(data + b"\x00")
    with pytest.raises(CheckpointError):
        parse_checkpoint(data[:5])

    path = tmp_path / "n.ckpt"
    path.write_bytes(data)
    with pytest.raises(CheckpointError, match="expected a dbfc"):
        load_checkpoint(path, kind="dbfc")
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "absent.ckpt")


def test_checkpoint_restore_rejects_other_architecture():
    ckpt = parse_checkpoint(checkpoint_bytes(build_segnet(SMALL_SEG), "segnet", {}, seed=0, iteration=0))
    with pytest.raises(CheckpointError):
        ckpt.restore(build_segnet(SegNetConfig(depth=2, base_width=8)))
