"""セグメンテーションネットワーク (U-Net).

エンコーダ・デコーダ構造で、入力 (N, C, H, W) に対し
同じ解像度の2クラス (背景 / 前景) ロジットを出力する。
"""

import logging

import torch
import torch.nn as nn

from config.experiment import SegNetConfig

logger = logging.getLogger(__name__)


def double_conv(in_channels: int, out_channels: int) -> nn.Sequential:
    """(Conv3x3 → BN → ReLU) × 2."""
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1),
        nn.BatchNorm2d(out_channels),
        nn.ReLU(),
        nn.Conv2d(out_channels, out_channels, kernel_size=3, padding=1),
        nn.BatchNorm2d(out_channels),
        nn.ReLU(),
    )


class UNet(nn.Module):
    """深さ可変の U-Net.

    Args:
        config: ネットワーク設定
    """

    def __init__(self, config: SegNetConfig):
        super().__init__()
        self.config = config
        widths = [config.base_width * 2**i for i in range(config.depth + 1)]

        self.down = nn.ModuleList()
        in_ch = config.in_channels
        for w in widths[:-1]:
            self.down.append(double_conv(in_ch, w))
            in_ch = w
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = double_conv(widths[-2], widths[-1])

        self.up = nn.ModuleList()
        self.up_conv = nn.ModuleList()
        for w_in, w_out in zip(reversed(widths[1:]), reversed(widths[:-1]), strict=True):
            self.up.append(nn.ConvTranspose2d(w_in, w_out, kernel_size=2, stride=2))
            self.up_conv.append(double_conv(2 * w_out, w_out))

        self.conv_last = nn.Conv2d(widths[0], config.out_channels, kernel_size=1)

    @property
    def divisor(self) -> int:
        """入力一辺が満たすべき約数."""
        return 2**self.config.depth

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        if h % self.divisor or w % self.divisor:
            raise ValueError(
                f"input size {h}x{w} is not divisible by 2^depth={self.divisor}; "
                "resize the images or lower SegNetConfig.depth"
            )
        skips = []
        for block in self.down:
            x = block(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for up, conv, skip in zip(self.up, self.up_conv, reversed(skips), strict=True):
            x = conv(torch.cat([up(x), skip], dim=1))
        return self.conv_last(x)


def build_segnet(config: SegNetConfig, seed: int = 0, image_side: int | None = None) -> UNet:
    """U-Net を構築.

    初期化はシードで決定的（グローバル乱数状態は変更しない）。

    Args:
        config: ネットワーク設定
        seed: 初期化シード
        image_side: 入力画像の一辺（指定時は 2^depth で割り切れるか検証）

    Returns:
        UNet: 構築したネットワーク

    Raises:
        ValueError: image_side が 2^depth で割り切れない場合
    """
    divisor = 2**config.depth
    if image_side is not None and image_side % divisor:
        raise ValueError(
            f"image side {image_side} is not divisible by 2^depth={divisor} (depth={config.depth})"
        )
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = UNet(config)
    logger.debug(f"Built U-Net depth={config.depth} base_width={config.base_width} seed={seed}")
    return net
