"""ドメイン型とマニフェスト入出力のテスト."""

import json

import numpy as np
import pytest

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
from tests.conftest import make_record


@pytest.mark.parametrize(
    "volume, expected",
    [(0.0, ContentClass.I), (50.0, ContentClass.I), (50.01, ContentClass.II), (100.0, ContentClass.II), (100.5, ContentClass.III)],
)
def test_label_for_volume_boundaries(volume, expected):
    assert label_for_volume(volume) is expected


def test_label_for_volume_rejects_negative():
    with pytest.raises(ValueError):
        label_for_volume(-1.0)


def test_content_class_from_name():
    assert ContentClass.from_name("III") is ContentClass.III
    with pytest.raises(ValueError):
        ContentClass.from_name("IV")


def test_image_validation():
    with pytest.raises(ValueError):
        UltrasoundImage(np.full((4, 4), 1.5), View.RLD, "P1", "S1")
    with pytest.raises(ValueError):
        UltrasoundImage(np.zeros((4, 5)), View.RLD, "P1", "S1")
    image = UltrasoundImage(np.zeros((4, 4)), "SUP", "P1", "S1")
    assert image.view is View.SUP
    assert image.side == 4
    with pytest.raises(ValueError):
        image.pixels[0, 0] = 0.5


def test_mask_and_probability_map_validation():
    with pytest.raises(ValueError):
        SegmentationMask(np.full((4, 4), 2))
    assert SegmentationMask(np.eye(4)).area == 4
    with pytest.raises(ValueError):
        ProbabilityMap(np.full((4, 4), -0.1))
    assert ProbabilityMap.ones(3).foreground.sum() == 9.0


def test_record_rejects_inconsistent_volume():
    base = make_record("P1")
    with pytest.raises(ValueError, match="inconsistent"):
        StudyRecord(
            patient_id="P1",
            study_id="P1-S1",
            rld=base.rld,
            sup=base.sup,
            label=ContentClass.III,
            volume_ml=20.0,
        )


def test_record_rejects_swapped_views():
    base = make_record("P1")
    with pytest.raises(ValueError, match="view"):
        StudyRecord(patient_id="P1", study_id="P1-S1", rld=base.sup, sup=base.rld, label=ContentClass.I)


def test_record_rejects_foreign_patient_images():
    other = make_record("P2")
    base = make_record("P1")
    with pytest.raises(ValueError):
        StudyRecord(patient_id="P1", study_id="P1-S1", rld=base.rld, sup=other.sup, label=ContentClass.I)


def test_split_rejects_shared_patients():
    a = make_record("P1")
    b = make_record("P1", study_id="P1-S2")
    with pytest.raises(ValueError, match="shared"):
        DatasetSplit(train_labeled=[a], test=[b])


def test_manifest_round_trip(tmp_path, phantom_records):
    records = phantom_records[:3]
    path = save_manifest(records, tmp_path / "manifest.jsonl")
    loaded = load_manifest(path)
    assert [r.study_id for r in loaded] == [r.study_id for r in records]
    for original, restored in zip(records, loaded, strict=True):
        assert restored.label is original.label
        assert restored.volume_ml == pytest.approx(original.volume_ml)
        np.testing.assert_array_equal(restored.rld.pixels, original.rld.pixels)
        np.testing.assert_array_equal(restored.sup.pixels, original.sup.pixels)
        np.testing.assert_array_equal(restored.rld_mask.pixels, original.rld_mask.pixels)
        np.testing.assert_array_equal(restored.sup_mask.pixels, original.sup_mask.pixels)


def test_manifest_without_masks(tmp_path):
    records = [make_record("P1", with_masks=False)]
    loaded = load_manifest(save_manifest(records, tmp_path / "m.jsonl"))
    assert not loaded[0].has_masks


def test_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_manifest(tmp_path / "absent.jsonl")


def test_manifest_problems_are_itemised(tmp_path):
    path = save_manifest([make_record("P1")], tmp_path / "manifest.jsonl")
    good = path.read_text().strip()
    entry = json.loads(good)
    missing_label = {k: v for k, v in entry.items() if k != "label"}
    lines = [good, "{not json", json.dumps(missing_label), good]
    path.write_text("\n".join(lines) + "\n")

    with pytest.raises(ManifestError) as excinfo:
        load_manifest(path)
    problems = excinfo.value.problems
    assert len(problems) == 3
    assert problems[0].startswith("line 2")
    assert "label" in problems[1]
    assert "duplicate" in problems[2]


def test_manifest_reports_missing_image(tmp_path):
    path = save_manifest([make_record("P1")], tmp_path / "manifest.jsonl")
    (tmp_path / "images" / "P1-S1_rld.png").unlink()
    with pytest.raises(ManifestError) as excinfo:
        load_manifest(path)
    assert len(excinfo.value.problems) == 1
