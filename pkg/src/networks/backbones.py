"""分類器バックボーンのレジストリ.

各バックボーンは画像 (N, C, H, W) から大域平均プーリング済みの
特徴ベクトルを返す features() と、線形ヘッドによるロジットを返す
forward() を持つ。
"""

import logging
from collections.abc import Callable

import torch
import torch.nn as nn

from config.experiment import ClassifierConfig

logger = logging.getLogger(__name__)


class Backbone(nn.Module):
    """バックボーン基底クラス."""

    feature_dim: int

    def __init__(self, config: ClassifierConfig):
        super().__init__()
        self.config = config

    def extract(self, x: torch.Tensor) -> torch.Tensor:
        """(N, C, H', W') の特徴マップ."""
        raise NotImplementedError

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """大域平均プーリング済み特徴 (N, feature_dim)."""
        return self.extract(x).mean(dim=(-2, -1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))

    def _make_head(self, feature_dim: int) -> None:
        self.feature_dim = feature_dim
        self.head = nn.Linear(feature_dim, self.config.n_cls)


def _scaled(width: int, scale: float, minimum: int = 4) -> int:
    return max(minimum, int(round(width * scale)))


_REGISTRY: dict[str, Callable[[ClassifierConfig], Backbone]] = {}


def register_backbone(name: str) -> Callable[[type[Backbone]], type[Backbone]]:
    """バックボーンクラスをレジストリに登録するデコレータ."""

    def decorator(cls: type[Backbone]) -> type[Backbone]:
        if name in _REGISTRY:
            raise ValueError(f"backbone '{name}' is already registered")
        _REGISTRY[name] = cls
        return cls

    return decorator


def available_backbones() -> list[str]:
    """登録済みバックボーン名."""
    return sorted(_REGISTRY)


def check_backbone_name(name: str) -> None:
    """未登録の名前なら ValueError."""
    if name not in _REGISTRY:
        raise ValueError(f"Unknown backbone '{name}'. Available: {available_backbones()}")


# ==================== densenet-like ====================


class DenseLayer(nn.Module):
    """BN-ReLU-Conv1x1-BN-ReLU-Conv3x3 を入力に連結する層."""

    def __init__(self, in_channels: int, growth_rate: int, bn_size: int = 4):
        super().__init__()
        self.conv = nn.Sequential(
            nn.BatchNorm2d(in_channels),
            nn.ReLU(),
            nn.Conv2d(in_channels, bn_size * growth_rate, kernel_size=1, bias=False),
            nn.BatchNorm2d(bn_size * growth_rate),
            nn.ReLU(),
            nn.Conv2d(bn_size * growth_rate, growth_rate, kernel_size=3, padding=1, bias=False),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.cat([x, self.conv(x)], dim=1)


def _transition(in_channels: int, out_channels: int) -> nn.Sequential:
    return nn.Sequential(
        nn.BatchNorm2d(in_channels),
        nn.ReLU(),
        nn.Conv2d(in_channels, out_channels, kernel_size=1, bias=False),
        nn.AvgPool2d(kernel_size=2, stride=2),
    )


@register_backbone("densenet-like")
class DenseNetLike(Backbone):
    """Dense block と transition 層からなるバックボーン (既定は DenseNet121 相当の層構成)."""

    def __init__(self, config: ClassifierConfig):
        super().__init__(config)
        growth = _scaled(32, config.width_scale)
        channels = _scaled(64, config.width_scale, minimum=8)
        layers: list[nn.Module] = [
            nn.Conv2d(config.in_channels, channels, kernel_size=7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(channels),
            nn.ReLU(),
            nn.MaxPool2d(kernel_size=3, stride=2, padding=1),
        ]
        for i, n_layers in enumerate(config.blocks):
            for j in range(n_layers):
                layers.append(DenseLayer(channels + j * growth, growth))
            channels += n_layers * growth
            if i < len(config.blocks) - 1:
                layers.append(_transition(channels, channels // 2))
                channels //= 2
        layers += [nn.BatchNorm2d(channels), nn.ReLU()]
        self.body = nn.Sequential(*layers)
        self._make_head(channels)

    def extract(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x)


# ==================== resnet-like ====================


class BasicBlock(nn.Module):
    """2層の残差ブロック."""

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1):
        super().__init__()
        self.conv = nn.Sequential(
            nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(),
            nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_channels),
        )
        self.shortcut: nn.Module = nn.Identity()
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_channels),
            )
        self.relu = nn.ReLU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.relu(self.conv(x) + self.shortcut(x))


@register_backbone("resnet-like")
class ResNetLike(Backbone):
    """BasicBlock を積んだ残差ネットワーク."""

    def __init__(self, config: ClassifierConfig):
        super().__init__(config)
        channels = _scaled(64, config.width_scale, minimum=8)
        layers: list[nn.Module] = [
            nn.Conv2d(config.in_channels, channels, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(channels),
            nn.ReLU(),
        ]
        for i, n_blocks in enumerate(config.blocks):
            out = _scaled(64 * 2**i, config.width_scale, minimum=8)
            for j in range(n_blocks):
                stride = 2 if (j == 0 and i > 0) else 1
                layers.append(BasicBlock(channels, out, stride))
                channels = out
        self.body = nn.Sequential(*layers)
        self._make_head(channels)

    def extract(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x)


# ==================== plain-cnn ====================


@register_backbone("plain-cnn")
class PlainCNN(Backbone):
    """Conv-BN-ReLU と MaxPool だけの小型 CNN."""

    def __init__(self, config: ClassifierConfig):
        super().__init__(config)
        channels = config.in_channels
        layers: list[nn.Module] = []
        for i, n_convs in enumerate(config.blocks):
            out = _scaled(32 * 2**i, config.width_scale)
            for _ in range(n_convs):
                layers += [nn.Conv2d(channels, out, 3, padding=1), nn.BatchNorm2d(out), nn.ReLU()]
                channels = out
            if i < len(config.blocks) - 1:
                layers.append(nn.MaxPool2d(2))
        self.body = nn.Sequential(*layers)
        self._make_head(channels)

    def extract(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x)


def build_classifier(config: ClassifierConfig, seed: int = 0) -> Backbone:
    """レジストリからバックボーンを構築.

    Args:
        config: 分類器設定
        seed: 初期化シード

    Returns:
        Backbone: 構築したネットワーク

    Raises:
        ValueError: 未登録のバックボーン名の場合
    """
    check_backbone_name(config.backbone_name)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = _REGISTRY[config.backbone_name](config)
    logger.debug(
        f"Built backbone {config.backbone_name} (width_scale={config.width_scale}, "
        f"feature_dim={net.feature_dim}, seed={seed})"
    )
    return net
