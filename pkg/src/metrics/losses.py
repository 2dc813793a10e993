"""損失関数モジュール.

セグメンテーション用の Dice 損失・画素交差エントロピーとその領域限定版、
分類用の Focal 損失を提供する。
テンソルはバッチ次元の有無どちらも受け付ける:
    ロジット (N, 2, H, W) / (2, H, W)、マスク (N, H, W) / (H, W)
"""

import logging
import warnings
from collections.abc import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from src.errors import EmptyRegionWarning, ProbabilityFloorWarning

logger = logging.getLogger(__name__)

DICE_EPS = 1e-5
FOCAL_FLOOR = 1e-8


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def _batched(logits: torch.Tensor, target: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """(2,H,W)/(H,W) をバッチ形式に揃え、形状を検証."""
    if logits.dim() == 3:
        logits = logits.unsqueeze(0)
    if target.dim() == 2:
        target = target.unsqueeze(0)
    if logits.dim() != 4 or logits.shape[1] != 2:
        raise ValueError(f"expected 2-channel logits, got shape {tuple(logits.shape)}")
    if tuple(target.shape) != (logits.shape[0], *logits.shape[2:]):
        raise ValueError(
            f"target shape {tuple(target.shape)} does not match logits {tuple(logits.shape)}"
        )
    return logits, target


def dice_loss(pred_fg: torch.Tensor, target: torch.Tensor, eps: float = DICE_EPS) -> torch.Tensor:
    """Dice 損失 1 − (2Σpg + ε)/(Σp + Σg + ε).

    Args:
        pred_fg: 前景確率
        target: 二値マスク
        eps: 平滑化項

    Returns:
        スカラー損失
    """
    _check_same_shape(pred_fg, target, "dice_loss")
    g = target.to(pred_fg.dtype)
    intersect = (pred_fg * g).sum()
    return 1.0 - (2.0 * intersect + eps) / (pred_fg.sum() + g.sum() + eps)


def pixel_cross_entropy(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """画素平均の交差エントロピー."""
    logits, target = _batched(logits, target)
    return F.cross_entropy(logits, target.long())


def seg_base_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Dice 損失 + 交差エントロピー."""
    logits, target = _batched(logits, target)
    pred_fg = torch.softmax(logits, dim=1)[:, 1]
    return dice_loss(pred_fg, target) + pixel_cross_entropy(logits, target)


def masked_seg_loss(
    logits: torch.Tensor,
    target: torch.Tensor,
    region: torch.Tensor,
    eps: float = DICE_EPS,
) -> torch.Tensor:
    """領域限定の Dice + CE.

    Dice の各総和と CE の平均を region=1 の画素だけで取る。
    region 外の予測・正解はいかなる値でも結果に影響しない。
    region が空の場合は 0 を返し EmptyRegionWarning を出す。

    Args:
        logits: 2クラスロジット
        target: 二値マスク
        region: 二値の領域マスク（target と同形状）

    Returns:
        スカラー損失
    """
    logits, target = _batched(logits, target)
    if region.dim() == 2:
        region = region.unsqueeze(0)
    _check_same_shape(region, target, "masked_seg_loss region")

    inside = region > 0
    n_inside = inside.sum()
    if int(n_inside) == 0:
        warnings.warn("masked_seg_loss called with an empty region; loss defined as 0", EmptyRegionWarning)
        return (logits * 0.0).sum()

    zero = torch.zeros((), dtype=logits.dtype, device=logits.device)
    safe_target = torch.where(inside, target.long(), torch.zeros_like(target, dtype=torch.long))
    safe_logits = torch.where(inside.unsqueeze(1), logits, zero)

    p = torch.softmax(safe_logits, dim=1)[:, 1]
    g = safe_target.to(logits.dtype)
    p_in = torch.where(inside, p, zero)
    g_in = torch.where(inside, g, zero)
    dice = 1.0 - (2.0 * (p_in * g_in).sum() + eps) / (p_in.sum() + g_in.sum() + eps)

    ce_map = F.cross_entropy(safe_logits, safe_target, reduction="none")
    ce = torch.where(inside, ce_map, zero).sum() / n_inside.to(logits.dtype)
    return dice + ce


def focal_loss(
    probs: torch.Tensor,
    target: torch.Tensor,
    focusing: float = 2.0,
    class_weights: torch.Tensor | None = None,
    floor: float = FOCAL_FLOOR,
) -> torch.Tensor:
    """確率入力の Focal 損失 −w_t (1−p_t)^focusing log p_t (バッチ平均).

    Args:
        probs: クラス確率 (N, C) または (C,)
        target: 正解クラス (N,) またはスカラー
        focusing: フォーカシングパラメータ (≥0)
        class_weights: クラス重み (C,)
        floor: p_t の下限

    Returns:
        スカラー損失
    """
    if focusing < 0:
        raise ValueError(f"focusing must be >= 0, got {focusing}")
    if probs.dim() == 1:
        probs = probs.unsqueeze(0)
    target = torch.as_tensor(target, device=probs.device).long().reshape(-1)
    if target.shape[0] != probs.shape[0]:
        raise ValueError(f"{probs.shape[0]} probability rows but {target.shape[0]} targets")
    if bool(((target < 0) | (target >= probs.shape[1])).any()):
        raise ValueError(f"target class out of range [0, {probs.shape[1]})")

    p_t = probs.gather(1, target.unsqueeze(1)).squeeze(1)
    if bool((p_t < floor).any()):
        warnings.warn(f"p_t below {floor}; clamped", ProbabilityFloorWarning)
        p_t = p_t.clamp(min=floor)

    loss = -((1.0 - p_t) ** focusing) * torch.log(p_t)
    if class_weights is not None:
        w = torch.as_tensor(class_weights, dtype=probs.dtype, device=probs.device)
        loss = w[target] * loss
    return loss.mean()


def inverse_frequency_weights(labels: Sequence[int], n_cls: int) -> np.ndarray:
    """逆頻度クラス重み w_c = N / (n_cls · max(count_c, 1))."""
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_cls)[:n_cls]
    total = max(len(labels), 1)
    return total / (n_cls * np.maximum(counts, 1).astype(np.float64))
