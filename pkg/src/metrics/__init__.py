"""損失関数・評価指標モジュール."""

from src.metrics.evaluation import (
    ConfusionMatrix,
    MetricReport,
    TTestResult,
    confusion,
    dsc,
    metrics,
    paired_t_test,
)
from src.metrics.losses import (
    dice_loss,
    focal_loss,
    inverse_frequency_weights,
    masked_seg_loss,
    pixel_cross_entropy,
    seg_base_loss,
)

__all__ = [
    "ConfusionMatrix",
    "MetricReport",
    "TTestResult",
    "confusion",
    "dice_loss",
    "dsc",
    "focal_loss",
    "inverse_frequency_weights",
    "masked_seg_loss",
    "metrics",
    "paired_t_test",
    "pixel_cross_entropy",
    "seg_base_loss",
]
