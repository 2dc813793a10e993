"""二視野の融合方式モジュール.

ロジットレベルの重み付き和 (weighted_logits) と、
大域平均プーリング特徴に対する5種類の特徴レベル融合を提供する。
"""

import logging

import numpy as np
import torch
import torch.nn as nn

from config.experiment import FusionSpec
from src.networks.params import count_parameters

logger = logging.getLogger(__name__)

_SIMPLEX_ATOL = 1e-6


def _check_simplex(y: torch.Tensor, name: str) -> None:
    atol = max(_SIMPLEX_ATOL, 10 * torch.finfo(y.dtype).eps)
    if bool((y < -atol).any()) or not torch.allclose(
        y.sum(dim=-1), torch.ones((), dtype=y.dtype), atol=atol, rtol=0.0
    ):
        raise ValueError(f"{name} is not a probability vector (sums {y.sum(dim=-1).tolist()})")


def fuse_weighted(y_r: torch.Tensor, y_s: torch.Tensor, beta: float) -> torch.Tensor:
    """y_f = β·y_r + (1−β)·y_s.

    Args:
        y_r: RLD 分岐のクラス確率
        y_s: SUP 分岐のクラス確率
        beta: RLD 側の重み [0, 1]

    Returns:
        融合後のクラス確率
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    y_r = torch.as_tensor(y_r)
    y_s = torch.as_tensor(y_s)
    if y_r.shape != y_s.shape:
        raise ValueError(f"fuse_weighted: shape mismatch {tuple(y_r.shape)} vs {tuple(y_s.shape)}")
    _check_simplex(y_r.detach(), "y_r")
    _check_simplex(y_s.detach(), "y_s")
    return beta * y_r + (1.0 - beta) * y_s


class FusionHead(nn.Module):
    """特徴レベル融合ヘッドの基底クラス (f_r, f_s) → logits."""

    def __init__(self, feature_dim: int, n_cls: int):
        super().__init__()
        self.feature_dim = feature_dim
        self.n_cls = n_cls

    def fuse(self, f_r: torch.Tensor, f_s: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def forward(self, f_r: torch.Tensor, f_s: torch.Tensor) -> torch.Tensor:
        if f_r.shape != f_s.shape or f_r.shape[-1] != self.feature_dim:
            raise ValueError(
                f"fusion expects two (N, {self.feature_dim}) features, got "
                f"{tuple(f_r.shape)} and {tuple(f_s.shape)}"
            )
        return self.fuse(f_r, f_s)


class ConcatFusion(FusionHead):
    """[f_r; f_s] に線形ヘッド."""

    def __init__(self, feature_dim: int, n_cls: int):
        super().__init__(feature_dim, n_cls)
        self.head = nn.Linear(2 * feature_dim, n_cls)

    def fuse(self, f_r: torch.Tensor, f_s: torch.Tensor) -> torch.Tensor:
        return self.head(torch.cat([f_r, f_s], dim=-1))


class SumFusion(FusionHead):
    """f_r + f_s に線形ヘッド."""

    def __init__(self, feature_dim: int, n_cls: int):
        super().__init__(feature_dim, n_cls)
        self.head = nn.Linear(feature_dim, n_cls)

    def fuse(self, f_r: torch.Tensor, f_s: torch.Tensor) -> torch.Tensor:
        return self.head(f_r + f_s)


class GatedFusion(FusionHead):
    """λ·f_r + (1−λ)·f_s, λ = sigmoid(学習可能スカラー), 初期値 λ = 0.5."""

    def __init__(self, feature_dim: int, n_cls: int):
        super().__init__(feature_dim, n_cls)
        self.gate = nn.Parameter(torch.zeros(()))
        self.head = nn.Linear(feature_dim, n_cls)

    @property
    def lam(self) -> torch.Tensor:
        return torch.sigmoid(self.gate)

    def fuse(self, f_r: torch.Tensor, f_s: torch.Tensor) -> torch.Tensor:
        lam = self.lam
        return self.head(lam * f_r + (1.0 - lam) * f_s)


class SEFusion(FusionHead):
    """連結特徴を squeeze-excitation でチャネル再重み付けしてから線形ヘッド."""

    def __init__(self, feature_dim: int, n_cls: int, reduction: int = 4):
        super().__init__(feature_dim, n_cls)
        hidden = max(1, 2 * feature_dim // reduction)
        self.excite = nn.Sequential(
            nn.Linear(2 * feature_dim, hidden),
            nn.ReLU(),
            nn.Linear(hidden, 2 * feature_dim),
            nn.Sigmoid(),
        )
        self.head = nn.Linear(2 * feature_dim, n_cls)

    def fuse(self, f_r: torch.Tensor, f_s: torch.Tensor) -> torch.Tensor:
        z = torch.cat([f_r, f_s], dim=-1)
        return self.head(z * self.excite(z))


class CrossAttentionFusion(FusionHead):
    """各視野の特徴が他方を参照する単一ヘッドのクロスアテンション."""

    def __init__(self, feature_dim: int, n_cls: int):
        super().__init__(feature_dim, n_cls)
        self.attn = nn.MultiheadAttention(feature_dim, num_heads=1, batch_first=True)
        self.head = nn.Linear(feature_dim, n_cls)

    def fuse(self, f_r: torch.Tensor, f_s: torch.Tensor) -> torch.Tensor:
        q_r, q_s = f_r.unsqueeze(1), f_s.unsqueeze(1)
        a_r, _ = self.attn(q_r, q_s, q_s, need_weights=False)
        a_s, _ = self.attn(q_s, q_r, q_r, need_weights=False)
        return self.head((f_r + a_r.squeeze(1)) + (f_s + a_s.squeeze(1)))


_FUSION_HEADS: dict[str, type[FusionHead]] = {
    "concat": ConcatFusion,
    "sum": SumFusion,
    "gated": GatedFusion,
    "se": SEFusion,
    "cross_attention": CrossAttentionFusion,
}


def build_fusion_head(spec: FusionSpec, feature_dim: int, n_cls: int, seed: int = 0) -> FusionHead | None:
    """融合ヘッドを構築（weighted_logits は None）."""
    if spec.kind == "weighted_logits":
        return None
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return _FUSION_HEADS[spec.kind](feature_dim, n_cls)


def fuse_features(f_r: torch.Tensor, f_s: torch.Tensor, head: FusionHead) -> torch.Tensor:
    """特徴レベル融合でロジットを得る."""
    if f_r.shape[-1] != f_s.shape[-1]:
        raise ValueError(f"feature dims differ: {f_r.shape[-1]} vs {f_s.shape[-1]}")
    return head(f_r, f_s)


def added_parameters(spec: FusionSpec, feature_dim: int, n_cls: int) -> int:
    """融合方式による追加パラメータ数.

    融合モジュールのパラメータ数から、基準となる線形ヘッド
    feature_dim → n_cls (バイアス付き) の分を引いた値。
    weighted_logits は融合モジュールを持たないため 0。

    concat のヘッドは 2·feature_dim → n_cls (バイアス付き) なので、
    基準ヘッドを引くと feature_dim·n_cls が残る（バイアスは相殺される）。
    例: feature_dim=8, n_cls=3 なら 24。
    """
    head = build_fusion_head(spec, feature_dim, n_cls)
    if head is None:
        return 0
    return count_parameters(head) - (feature_dim * n_cls + n_cls)


def fusion_parameter_table(feature_dim: int, n_cls: int) -> dict[str, int]:
    """全融合方式の追加パラメータ数."""
    kinds = ["weighted_logits", *_FUSION_HEADS]
    return {k: added_parameters(FusionSpec(kind=k), feature_dim, n_cls) for k in kinds}


def is_simplex(y: np.ndarray, atol: float = _SIMPLEX_ATOL) -> bool:
    """確率ベクトルかどうか."""
    y = np.asarray(y, dtype=np.float64)
    return bool((y >= -atol).all() and np.allclose(y.sum(axis=-1), 1.0, atol=atol, rtol=0.0))
