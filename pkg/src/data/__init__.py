"""データモデル・マニフェスト・分割モジュール."""

from src.data.manifest import ManifestError, load_manifest, save_manifest
from src.data.records import (
    ContentClass,
    DatasetSplit,
    ProbabilityMap,
    SegmentationMask,
    StudyRecord,
    UltrasoundImage,
    View,
    label_for_volume,
)
from src.data.splits import kfold_patient_partition, patient_level_split, select_labeled_subset

__all__ = [
    "ContentClass",
    "DatasetSplit",
    "ManifestError",
    "ProbabilityMap",
    "SegmentationMask",
    "StudyRecord",
    "UltrasoundImage",
    "View",
    "kfold_patient_partition",
    "label_for_volume",
    "load_manifest",
    "patient_level_split",
    "save_manifest",
    "select_labeled_subset",
]
