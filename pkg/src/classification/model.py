"""二分岐融合分類器モジュール.

RLD / SUP の各視野に独立した重みのバックボーンを持ち、
各分岐のクラス確率と、融合方式に応じた融合確率を出力する。
"""

import logging
from dataclasses import dataclass

import torch
import torch.nn as nn

from config.experiment import DbfcConfig
from src.classification.fusion import build_fusion_head, fuse_weighted
from src.networks.backbones import Backbone, build_classifier

logger = logging.getLogger(__name__)


@dataclass
class DbfcOutput:
    """分類器出力 (いずれも (N, n_cls) のクラス確率)."""

    y_f: torch.Tensor
    y_r: torch.Tensor
    y_s: torch.Tensor


def branch_predict(branch_net: Backbone, x_guided: torch.Tensor) -> torch.Tensor:
    """分岐のロジットを softmax したクラス確率.

    Raises:
        FloatingPointError: ロジットが非有限の場合
    """
    logits = branch_net(x_guided)
    if not bool(torch.isfinite(logits).all()):
        raise FloatingPointError(
            f"non-finite logits from {type(branch_net).__name__}: {logits.detach().flatten()[:6].tolist()}"
        )
    return torch.softmax(logits, dim=-1)


def _softmax_checked(logits: torch.Tensor, name: str) -> torch.Tensor:
    if not bool(torch.isfinite(logits).all()):
        raise FloatingPointError(f"non-finite logits in {name} branch")
    return torch.softmax(logits, dim=-1)


class DualBranchClassifier(nn.Module):
    """二視野の分岐と融合ヘッドからなる分類器.

    Args:
        config: DBFC 設定
        seed: 初期化シード（RLD 分岐は seed、SUP 分岐は seed+1）
    """

    view_mode = "dual"

    def __init__(self, config: DbfcConfig, seed: int = 0):
        super().__init__()
        self.config = config
        self.branch_r = build_classifier(config.backbone, seed=seed)
        self.branch_s = build_classifier(config.backbone, seed=seed + 1)
        self.fusion_head = build_fusion_head(
            config.fusion, self.branch_r.feature_dim, config.backbone.n_cls, seed=seed + 2
        )

    def forward(self, x_r: torch.Tensor, x_s: torch.Tensor) -> DbfcOutput:
        f_r = self.branch_r.features(x_r)
        f_s = self.branch_s.features(x_s)
        y_r = _softmax_checked(self.branch_r.head(f_r), "RLD")
        y_s = _softmax_checked(self.branch_s.head(f_s), "SUP")
        if self.fusion_head is None:
            assert self.config.fusion.beta is not None
            y_f = fuse_weighted(y_r, y_s, self.config.fusion.beta)
        else:
            y_f = _softmax_checked(self.fusion_head(f_r, f_s), "fusion")
        return DbfcOutput(y_f=y_f, y_r=y_r, y_s=y_s)


class SingleViewClassifier(nn.Module):
    """単一視野のみを用いる分類器（アブレーションのベースライン）."""

    def __init__(self, config: DbfcConfig, seed: int = 0):
        super().__init__()
        if config.view_mode == "dual":
            raise ValueError("SingleViewClassifier needs view_mode 'rld' or 'sup'")
        self.config = config
        self.view_mode = config.view_mode
        self.branch = build_classifier(config.backbone, seed=seed)

    def forward(self, x_r: torch.Tensor, x_s: torch.Tensor) -> DbfcOutput:
        x = x_r if self.view_mode == "rld" else x_s
        y = branch_predict(self.branch, x)
        return DbfcOutput(y_f=y, y_r=y, y_s=y)


def build_dbfc(config: DbfcConfig, seed: int = 0) -> DualBranchClassifier | SingleViewClassifier:
    """view_mode に応じた分類器を構築."""
    if config.view_mode == "dual":
        return DualBranchClassifier(config, seed=seed)
    return SingleViewClassifier(config, seed=seed)
