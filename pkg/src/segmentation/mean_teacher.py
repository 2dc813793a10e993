"""平均教師 (Mean Teacher) モジュール.

教師モデルは生徒モデルの指数移動平均 θ_t ← α·θ_t + (1−α)·θ_s で更新し、
勾配は一切受け取らない。
"""

import copy
import logging
from dataclasses import dataclass, replace

import torch
import torch.nn as nn

from src.networks.params import ParamVector

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.99


@dataclass(frozen=True)
class MTState:
    """平均教師の状態."""

    student: ParamVector
    teacher: ParamVector
    iteration: int = 0
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")
        if len(self.student) != len(self.teacher):
            raise ValueError(
                f"student ({len(self.student)}) and teacher ({len(self.teacher)}) lengths differ"
            )


def ema_update(state: MTState) -> MTState:
    """教師パラメータを EMA で1ステップ更新した新しい状態を返す."""
    teacher = state.teacher.values
    student = state.student.values
    new_values = state.alpha * teacher + (1.0 - state.alpha) * student.to(teacher.dtype)
    return replace(
        state,
        teacher=replace(state.teacher, values=new_values),
        iteration=state.iteration + 1,
    )


@torch.no_grad()
def ema_update_module(
    teacher: nn.Module, student: nn.Module, alpha: float = DEFAULT_ALPHA, iteration: int = 0
) -> MTState:
    """モジュール単位の EMA 更新.

    パラメータは ParamVector 上の ema_update で更新して教師へ書き戻す。
    BN の浮動小数バッファも同じ規則で平均し、整数バッファはコピーする。

    Returns:
        MTState: 更新後の状態
    """
    state = ema_update(
        MTState(
            student=ParamVector.from_module(student),
            teacher=ParamVector.from_module(teacher),
            iteration=iteration,
            alpha=alpha,
        )
    )
    state.teacher.assign_to(teacher)
    for t_buf, s_buf in zip(teacher.buffers(), student.buffers(), strict=True):
        if t_buf.dtype.is_floating_point:
            t_buf.mul_(alpha).add_(s_buf, alpha=1.0 - alpha)
        else:
            t_buf.copy_(s_buf)
    return state


def make_teacher(student: nn.Module) -> nn.Module:
    """生徒の複製から勾配を受けない教師モデルを作る."""
    teacher = copy.deepcopy(student)
    for p in teacher.parameters():
        p.requires_grad_(False)
    teacher.eval()
    return teacher


@torch.no_grad()
def teacher_pseudo_label(teacher_net: nn.Module, x_u: torch.Tensor) -> torch.Tensor:
    """教師の softmax の画素ごと argmax による疑似ラベル.

    同値の場合は背景 (0) とする。

    Args:
        teacher_net: 教師モデル
        x_u: ラベルなし画像 (N, 1, H, W)

    Returns:
        (N, H, W) の long テンソル
    """
    was_training = teacher_net.training
    teacher_net.eval()
    try:
        probs = torch.softmax(teacher_net(x_u), dim=1)
    finally:
        teacher_net.train(was_training)
    return (probs[:, 1] > probs[:, 0]).long()
