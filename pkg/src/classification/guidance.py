"""確率マップ誘導 (PMG) モジュール."""

from typing import TypeVar

import numpy as np
import torch

ArrayT = TypeVar("ArrayT", np.ndarray, torch.Tensor)


def apply_guidance(x: ArrayT, p: ArrayT, gamma: float) -> ArrayT:
    """x' = (1−γ)·x + γ·(x⊙p) を [0, 1] に切り詰めて返す.

    Args:
        x: 画像
        p: 前景確率マップ（x と同形状）
        gamma: 誘導強度 [0, 1]

    Returns:
        誘導後の画像
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    if tuple(x.shape) != tuple(p.shape):
        raise ValueError(f"apply_guidance: shape mismatch {tuple(x.shape)} vs {tuple(p.shape)}")
    guided = (1.0 - gamma) * x + gamma * (x * p)
    if isinstance(guided, torch.Tensor):
        return guided.clamp(0.0, 1.0)
    return np.clip(guided, 0.0, 1.0)
