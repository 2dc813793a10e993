"""desk プリセットでのシード固定エンドツーエンド検証（数分〜数十分）.

pytest -m slow で実行する。
"""

import numpy as np
import pytest
import torch

from config.experiment import PhantomParams, apply_overrides, preset_config
from src.classification.trainer import train_dbfc
from src.data.splits import patient_level_split
from src.experiments import emit_report, run_cross_validation
from src.metrics.evaluation import dsc
from src.phantom.generator import generate_dataset
from src.segmentation.mean_teacher import teacher_pseudo_label
from src.segmentation.trainer import (
    evaluate_segmentation,
    predict_probability_map,
    pretrain_supervised,
    train_segmentation,
)

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def desk_config():
    return preset_config("desk")


@pytest.fixture(scope="module")
def desk_records(desk_config):
    records, _ = generate_dataset(desk_config.phantom, desk_config.n_patients, desk_config.class_priors, seed=0)
    return records


@pytest.fixture(scope="module")
def desk_split(desk_config, desk_records):
    return patient_level_split(desk_records, desk_config.split_ratios, seed=0, labeled_fraction=desk_config.labeled_fraction)


@pytest.fixture(scope="module")
def noiseless_fit(desk_config):
    params = PhantomParams(image_side=64, speckle_strength=0.0, n_artifacts=0)
    records, _ = generate_dataset(params, 10, desk_config.class_priors, seed=5)
    config = apply_overrides(desk_config, {"phantom": params.model_dump()})
    return pretrain_supervised(config, records, [], seed=0, iterations=200).network, records


def test_supervised_fit_on_noiseless_phantoms(noiseless_fit):
    network, records = noiseless_fit
    assert evaluate_segmentation(network, records) >= 0.9


def test_stage1_teacher_quality(desk_config, desk_split):
    teacher = train_segmentation(
        desk_config, desk_split.train_labeled, desk_split.train_unlabeled, desk_split.val, seed=0
    )
    supervised = apply_overrides(desk_config, {"seg_setting": "supervised_labeled"})
    baseline = train_segmentation(
        supervised, desk_split.train_labeled, desk_split.train_unlabeled, desk_split.val, seed=0
    )
    teacher_dsc = evaluate_segmentation(teacher.network, desk_split.test)
    assert teacher_dsc >= 0.85
    assert teacher_dsc >= evaluate_segmentation(baseline.network, desk_split.test)


def test_classifier_beats_chance(desk_config, desk_split):
    teacher = train_segmentation(
        desk_config, desk_split.train_labeled, desk_split.train_unlabeled, desk_split.val, seed=0
    )
    result = train_dbfc(desk_config, desk_split.train, desk_split.val, teacher.network, seed=0)
    assert result.best_val_acc > 1 / 3 + 0.2


def test_full_pipeline_not_worse_than_single_view_baseline(desk_config, desk_records):
    full = run_cross_validation(desk_config, desk_records, gallery_limit=0)
    baseline_cfg = apply_overrides(desk_config, {"dbfc.use_pmg": False, "dbfc.view_mode": "rld"})
    baseline = run_cross_validation(baseline_cfg, desk_records, gallery_limit=0)
    assert len(full.folds) == desk_config.k_folds
    assert np.mean(full.fold_values("acc")) >= np.mean(baseline.fold_values("acc"))


def test_repeated_runs_write_identical_csvs(desk_config, desk_records, tmp_path):
    for name in ("a", "b"):
        report = run_cross_validation(desk_config, desk_records, gallery_limit=0)
        emit_report(report, tmp_path / name)
    csvs = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    assert "aggregate_metrics.csv" in csvs
    for name in csvs:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_pseudo_labels_after_pretraining_match_masks(noiseless_fit):
    network, records = noiseless_fit
    images = torch.tensor(np.stack([r.rld.pixels for r in records]), dtype=torch.float32).unsqueeze(1)
    labels = teacher_pseudo_label(network, images).numpy()
    scores = [dsc(label, r.rld_mask) for label, r in zip(labels, records, strict=True)]
    assert np.mean(scores) >= 0.8


def test_probability_map_concentrates_inside_antrum(noiseless_fit):
    network, records = noiseless_fit
    for record in records:
        p = predict_probability_map(network, record.sup).foreground
        inside = record.sup_mask.pixels.astype(bool)
        assert p[inside].mean() > p[~inside].mean()
