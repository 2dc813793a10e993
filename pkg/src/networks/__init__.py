"""ネットワーク定義モジュール."""

from src.networks.backbones import (
    Backbone,
    available_backbones,
    build_classifier,
    check_backbone_name,
    register_backbone,
)
from src.networks.params import (
    Checkpoint,
    CheckpointError,
    ParamVector,
    checkpoint_bytes,
    count_parameters,
    load_checkpoint,
    parse_checkpoint,
    save_checkpoint,
)
from src.networks.segnet import UNet, build_segnet

__all__ = [
    "Backbone",
    "Checkpoint",
    "CheckpointError",
    "ParamVector",
    "UNet",
    "available_backbones",
    "build_classifier",
    "build_segnet",
    "check_backbone_name",
    "checkpoint_bytes",
    "count_parameters",
    "load_checkpoint",
    "parse_checkpoint",
    "register_backbone",
    "save_checkpoint",
]
