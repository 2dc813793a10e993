"""双方向コピーペースト (BCP) モジュール.

ラベル付き画像とラベルなし画像の間で矩形パッチを入れ替えた2枚の
合成画像を作り、ラベル由来の画素を正解で、ラベルなし由来の画素を
教師モデルの疑似ラベルで監督する。
"""

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch
import torch.nn as nn

from src.errors import InfeasibleBandError
from src.metrics.losses import masked_seg_loss

logger = logging.getLogger(__name__)

_ASPECT_MIN, _ASPECT_MAX = 0.5, 2.0


@dataclass(frozen=True, eq=False)
class PatchMask:
    """矩形パッチマスク m (1 = パッチ領域)."""

    top: int
    left: int
    height: int
    width: int
    image_height: int
    image_width: int

    @property
    def pixels(self) -> np.ndarray:
        m = np.zeros((self.image_height, self.image_width), dtype=np.uint8)
        m[self.top : self.top + self.height, self.left : self.left + self.width] = 1
        return m

    @property
    def area_fraction(self) -> float:
        return self.height * self.width / (self.image_height * self.image_width)

    def to_tensor(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        return torch.from_numpy(self.pixels).to(dtype)


@lru_cache(maxsize=32)
def _feasible_rectangles(height: int, width: int, lo: float, hi: float) -> np.ndarray:
    """面積帯とアスペクト比 [1/2, 2] を満たす (h, w) の一覧."""
    hs, ws = np.meshgrid(np.arange(1, height + 1), np.arange(1, width + 1), indexing="ij")
    frac = hs * ws / (height * width)
    aspect = ws / hs
    ok = (frac >= lo) & (frac <= hi) & (aspect >= _ASPECT_MIN) & (aspect <= _ASPECT_MAX)
    return np.stack([hs[ok], ws[ok]], axis=1)


def sample_patch_mask(
    height: int,
    width: int,
    area_band: tuple[float, float] = (0.2, 0.3),
    seed: int | np.random.Generator = 0,
) -> PatchMask:
    """面積帯内の矩形パッチマスクをサンプル.

    目標面積率とアスペクト比をサンプルし、それに最も近い実現可能な
    整数矩形を選んで一様ランダムな位置に置く。

    Args:
        height: 画像の高さ
        width: 画像の幅
        area_band: 面積率の範囲 [lo, hi]
        seed: 乱数シードまたは Generator

    Returns:
        PatchMask: パッチマスク

    Raises:
        InfeasibleBandError: 条件を満たす矩形が存在しない場合
    """
    lo, hi = float(area_band[0]), float(area_band[1])
    if not 0.0 < lo <= hi <= 1.0:
        raise InfeasibleBandError(f"area band {area_band} must satisfy 0 < lo <= hi <= 1")
    candidates = _feasible_rectangles(height, width, lo, hi)
    if len(candidates) == 0:
        raise InfeasibleBandError(
            f"no integer rectangle on a {height}x{width} grid has area fraction in [{lo}, {hi}] "
            f"and aspect ratio in [{_ASPECT_MIN}, {_ASPECT_MAX}]"
        )

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    target = rng.uniform(lo, hi) * height * width
    aspect = np.exp(rng.uniform(np.log(_ASPECT_MIN), np.log(_ASPECT_MAX)))
    h_ideal = np.sqrt(target / aspect)
    w_ideal = aspect * h_ideal
    dist = (candidates[:, 0] - h_ideal) ** 2 + (candidates[:, 1] - w_ideal) ** 2
    h, w = (int(v) for v in candidates[int(np.argmin(dist))])

    top = int(rng.integers(0, height - h + 1))
    left = int(rng.integers(0, width - w + 1))
    return PatchMask(top, left, h, w, height, width)


def _as_mask_tensor(m: PatchMask | torch.Tensor | np.ndarray, like: torch.Tensor) -> torch.Tensor:
    if isinstance(m, PatchMask):
        m = m.pixels
    return torch.as_tensor(np.asarray(m) if not isinstance(m, torch.Tensor) else m, device=like.device)


def bcp_compose(
    x_u: torch.Tensor,
    x_l: torch.Tensor,
    m: PatchMask | torch.Tensor | np.ndarray,
) -> tuple[torch.Tensor, torch.Tensor]:
    """2枚の合成画像を作る.

    x_ul = x_u⊙m + x_l⊙(1−m), x_lu = x_l⊙m + x_u⊙(1−m)。
    各画素は元画像の値をそのまま持つ。

    Args:
        x_u: ラベルなし画像 (…, H, W)
        x_l: ラベル付き画像 (…, H, W)
        m: パッチマスク (H, W) または (N, H, W) / (N, 1, H, W)

    Returns:
        (x_ul, x_lu)
    """
    if x_u.shape != x_l.shape:
        raise ValueError(f"bcp_compose: shape mismatch {tuple(x_u.shape)} vs {tuple(x_l.shape)}")
    mask = _as_mask_tensor(m, x_u) > 0
    if x_u.dim() == 4 and mask.dim() == 3:
        mask = mask.unsqueeze(1)
    if mask.shape[-2:] != x_u.shape[-2:]:
        raise ValueError(f"bcp_compose: mask shape {tuple(mask.shape)} does not match images")
    x_ul = torch.where(mask, x_u, x_l)
    x_lu = torch.where(mask, x_l, x_u)
    return x_ul, x_lu


@dataclass(frozen=True)
class BcpLoss:
    """BCP 損失の内訳 (L_s: ラベル由来画素, L_c: ラベルなし由来画素)."""

    l_s: torch.Tensor
    l_c: torch.Tensor

    @property
    def total(self) -> torch.Tensor:
        return self.l_s + self.l_c


def bcp_loss_from_logits(
    logits_ul: torch.Tensor,
    logits_lu: torch.Tensor,
    y_l: torch.Tensor,
    y_u: torch.Tensor,
    m: torch.Tensor,
) -> BcpLoss:
    """合成画像のロジットから BCP 損失を計算."""
    region = m.to(torch.float32)
    if region.dim() == 4:
        region = region.squeeze(1)
    inv = 1.0 - region
    l_s = masked_seg_loss(logits_ul, y_l, inv) + masked_seg_loss(logits_lu, y_l, region)
    l_c = masked_seg_loss(logits_ul, y_u, region) + masked_seg_loss(logits_lu, y_u, inv)
    return BcpLoss(l_s=l_s, l_c=l_c)


def bcp_loss_terms(
    student_net: nn.Module,
    x_ul: torch.Tensor,
    x_lu: torch.Tensor,
    y_l: torch.Tensor,
    y_u: torch.Tensor,
    m: PatchMask | torch.Tensor | np.ndarray,
) -> BcpLoss:
    """生徒モデルで合成画像を予測し、BCP 損失の内訳を返す."""
    mask = _as_mask_tensor(m, x_ul)
    if mask.dim() == 2 and x_ul.dim() == 4:
        mask = mask.unsqueeze(0).expand(x_ul.shape[0], -1, -1)
    return bcp_loss_from_logits(student_net(x_ul), student_net(x_lu), y_l, y_u, mask)


def bcp_training_loss(
    student_net: nn.Module,
    x_ul: torch.Tensor,
    x_lu: torch.Tensor,
    y_l: torch.Tensor,
    y_u: torch.Tensor,
    m: PatchMask | torch.Tensor | np.ndarray,
) -> torch.Tensor:
    """L_seg = L_s + L_c."""
    return bcp_loss_terms(student_net, x_ul, x_lu, y_l, y_u, m).total
