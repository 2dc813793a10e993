"""共通フィクスチャ."""

import numpy as np
import pytest

from config.experiment import ExperimentConfig, PhantomParams, apply_overrides, preset_config
from src.data.records import ContentClass, SegmentationMask, StudyRecord, UltrasoundImage, View
from src.phantom.generator import generate_dataset

TINY_OVERRIDES = {
    "n_patients": 10,
    "k_folds": 2,
    "phantom.image_side": 64,
    "segnet.depth": 2,
    "segnet.base_width": 4,
    "seg_training.iterations": 6,
    "seg_training.labeled_batch_size": 2,
    "seg_training.unlabeled_batch_size": 2,
    "seg_training.eval_interval": 3,
    "seg_training.log_interval": 3,
    "dbfc.backbone": {"backbone_name": "plain-cnn", "width_scale": 0.25, "blocks": [1, 1]},
    "dbfc.epochs": 2,
    "dbfc.batch_size": 4,
}


def make_tiny_config(**overrides) -> ExperimentConfig:
    """数秒で学習が終わる設定."""
    config = apply_overrides(preset_config("desk"), TINY_OVERRIDES)
    return apply_overrides(config, overrides) if overrides else config


def make_record(
    patient_id: str,
    label: ContentClass = ContentClass.I,
    side: int = 8,
    with_masks: bool = True,
    study_id: str | None = None,
    seed: int = 0,
) -> StudyRecord:
    """ランダム画素の小さなレコード."""
    rng = np.random.default_rng(seed)
    sid = study_id or f"{patient_id}-S1"
    mask = np.zeros((side, side), dtype=np.uint8)
    mask[side // 4 : side // 2, side // 4 : side // 2] = 1
    return StudyRecord(
        patient_id=patient_id,
        study_id=sid,
        rld=UltrasoundImage(rng.random((side, side)), View.RLD, patient_id, sid),
        sup=UltrasoundImage(rng.random((side, side)), View.SUP, patient_id, sid),
        label=label,
        rld_mask=SegmentationMask(mask) if with_masks else None,
        sup_mask=SegmentationMask(mask) if with_masks else None,
    )


@pytest.fixture
def tiny_config() -> ExperimentConfig:
    return make_tiny_config()


@pytest.fixture(scope="session")
def phantom_params() -> PhantomParams:
    return PhantomParams(image_side=64)


@pytest.fixture(scope="session")
def phantom_records(phantom_params):
    """10 患者の合成データセット（テスト間で共有、変更しないこと）."""
    config = make_tiny_config()
    records, _ = generate_dataset(phantom_params, 10, config.class_priors, seed=0)
    return records


@pytest.fixture
def synthetic_patients():
    """ラベル付きの小さなレコード 20 患者分."""
    return [make_record(f"P{i:03d}", ContentClass(i % 3), seed=i) for i in range(20)]
