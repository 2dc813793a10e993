"""合成ファントム生成モジュール."""

from src.phantom.generator import (
    VOLUME_RANGE_ML,
    generate_dataset,
    generate_study,
    rasterize_ellipse,
    sample_class_labels,
)

__all__ = [
    "VOLUME_RANGE_ML",
    "generate_dataset",
    "generate_study",
    "rasterize_ellipse",
    "sample_class_labels",
]
