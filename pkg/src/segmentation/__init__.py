"""ステージ1: 半教師あり胃前庭部セグメンテーション."""

from src.segmentation.bcp import (
    BcpLoss,
    PatchMask,
    bcp_compose,
    bcp_loss_terms,
    bcp_training_loss,
    sample_patch_mask,
)
from src.segmentation.mean_teacher import MTState, ema_update, ema_update_module, teacher_pseudo_label
from src.segmentation.trainer import (
    SegTrainingResult,
    evaluate_segmentation,
    export_probability_map,
    load_probability_map,
    load_segnet,
    predict_probability_map,
    predict_probability_maps,
    pretrain_supervised,
    train_segmentation,
    train_semi_supervised,
)

__all__ = [
    "BcpLoss",
    "MTState",
    "PatchMask",
    "SegTrainingResult",
    "bcp_compose",
    "bcp_loss_terms",
    "bcp_training_loss",
    "ema_update",
    "ema_update_module",
    "evaluate_segmentation",
    "export_probability_map",
    "load_probability_map",
    "load_segnet",
    "predict_probability_map",
    "predict_probability_maps",
    "pretrain_supervised",
    "sample_patch_mask",
    "teacher_pseudo_label",
    "train_segmentation",
    "train_semi_supervised",
]
