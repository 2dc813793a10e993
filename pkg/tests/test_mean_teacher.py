"""平均教師の EMA 更新と疑似ラベルのテスト."""

import pytest
import torch
import torch.nn as nn

from config.experiment import SegNetConfig
from src.networks import ParamVector, build_segnet
from src.segmentation.mean_teacher import MTState, ema_update, ema_update_module, make_teacher, teacher_pseudo_label


def _vector(values: torch.Tensor) -> ParamVector:
    return ParamVector(values=values, names=("w",), shapes=(tuple(values.shape),))


def test_ema_follows_closed_form():
    g = torch.Generator().manual_seed(0)
    student = torch.randn(16, generator=g, dtype=torch.float64)
    teacher0 = torch.randn(16, generator=g, dtype=torch.float64)
    state = MTState(student=_vector(student), teacher=_vector(teacher0), alpha=0.99)
    for _ in range(500):
        state = ema_update(state)
    # 生徒固定なら θ_t = α^k θ_0 + (1 − α^k) θ_s
    expected = 0.99**500 * teacher0 + (1 - 0.99**500) * student
    assert state.iteration == 500
    assert torch.allclose(state.teacher.values, expected, atol=1e-6)


def test_ema_with_zero_alpha_copies_student():
    state = MTState(student=_vector(torch.ones(3)), teacher=_vector(torch.zeros(3)), alpha=0.0)
    assert torch.equal(ema_update(state).teacher.values, torch.ones(3))


def test_mt_state_validation():
    with pytest.raises(ValueError):
        MTState(student=_vector(torch.ones(3)), teacher=_vector(torch.ones(3)), alpha=1.0)
    with pytest.raises(ValueError):
        MTState(student=_vector(torch.ones(3)), teacher=_vector(torch.ones(4)))


def test_module_ema_updates_parameters_and_buffers():
    config = SegNetConfig(depth=2, base_width=4)
    student = build_segnet(config, seed=0)
    teacher = make_teacher(build_segnet(config, seed=1))
    before = ParamVector.from_module(teacher).values

    student.train()
    student(torch.rand(2, 1, 8, 8))
    ema_update_module(teacher, student, alpha=0.5)

    expected = 0.5 * before + 0.5 * ParamVector.from_module(student).values
    assert torch.allclose(ParamVector.from_module(teacher).values, expected)

    s_bn = student.down[0][1]
    t_bn = teacher.down[0][1]
    assert torch.allclose(t_bn.running_mean, 0.5 * s_bn.running_mean)
    assert int(t_bn.num_batches_tracked) == int(s_bn.num_batches_tracked) == 1


def test_module_ema_matches_vector_ema():
    config = SegNetConfig(depth=2, base_width=4)
    student = build_segnet(config, seed=0)
    teacher = make_teacher(build_segnet(config, seed=1))
    expected = ema_update(
        MTState(student=ParamVector.from_module(student), teacher=ParamVector.from_module(teacher), iteration=7)
    )
    state = ema_update_module(teacher, student, iteration=7)
    assert state.iteration == expected.iteration == 8
    assert torch.equal(state.teacher.values, expected.teacher.values)
    assert torch.equal(ParamVector.from_module(teacher).values, expected.teacher.values)
    assert all(not p.requires_grad for p in teacher.parameters())


def test_teacher_receives_no_gradients():
    teacher = make_teacher(build_segnet(SegNetConfig(depth=2, base_width=4)))
    assert not teacher.training
    assert all(not p.requires_grad for p in teacher.parameters())


class _Constant(nn.Module):
    def __init__(self, fg: float):
        super().__init__()
        self.fg = fg

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        bg = torch.zeros_like(x)
        return torch.cat([bg, torch.full_like(x, self.fg)], dim=1)


def test_pseudo_label_ties_go_to_background():
    x = torch.rand(2, 1, 4, 4)
    assert teacher_pseudo_label(_Constant(0.0), x).sum() == 0
    assert teacher_pseudo_label(_Constant(1.0), x).sum() == 32
    assert teacher_pseudo_label(_Constant(0.0), x).dtype == torch.long


def test_pseudo_label_restores_training_mode():
    net = build_segnet(SegNetConfig(depth=2, base_width=4)).train()
    labels = teacher_pseudo_label(net, torch.rand(1, 1, 8, 8))
    assert labels.shape == (1, 8, 8)
    assert net.training
