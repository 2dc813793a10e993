"""ステージ2: 確率マップ誘導つき二分岐融合分類."""

from src.classification.fusion import (
    FusionHead,
    added_parameters,
    build_fusion_head,
    fuse_features,
    fuse_weighted,
    fusion_parameter_table,
    is_simplex,
)
from src.classification.gallery import GalleryItem, gallery_items, write_gallery
from src.classification.guidance import apply_guidance
from src.classification.model import (
    DbfcOutput,
    DualBranchClassifier,
    SingleViewClassifier,
    branch_predict,
    build_dbfc,
)
from src.classification.trainer import (
    DbfcTrainingResult,
    GuidedInputs,
    StudyPrediction,
    dbfc_loss,
    evaluate_dbfc,
    guided_inputs,
    load_dbfc,
    predict_study,
    predict_views,
    resolve_class_weights,
    run_dbfc,
    train_dbfc,
)

__all__ = [
    "DbfcOutput",
    "DbfcTrainingResult",
    "DualBranchClassifier",
    "FusionHead",
    "GalleryItem",
    "GuidedInputs",
    "SingleViewClassifier",
    "StudyPrediction",
    "added_parameters",
    "apply_guidance",
    "branch_predict",
    "build_dbfc",
    "build_fusion_head",
    "dbfc_loss",
    "evaluate_dbfc",
    "fuse_features",
    "fuse_weighted",
    "fusion_parameter_table",
    "gallery_items",
    "guided_inputs",
    "is_simplex",
    "load_dbfc",
    "predict_study",
    "predict_views",
    "resolve_class_weights",
    "run_dbfc",
    "train_dbfc",
    "write_gallery",
]
