"""患者単位の分割のテスト."""

import pytest

from src.data.records import ContentClass, patient_ids
from src.data.splits import kfold_patient_partition, patient_level_split, select_labeled_subset
from tests.conftest import make_record


def _records(n_patients: int, studies_per_patient: int = 1):
    return [
        make_record(f"P{i:04d}", ContentClass(i % 3), side=4, study_id=f"P{i:04d}-S{j}", seed=i)
        for i in range(n_patients)
        for j in range(studies_per_patient)
    ]


def test_reference_sized_split_counts():
    split = patient_level_split(_records(364), seed=0)
    summary = split.summary()
    assert summary["train_labeled"] + summary["train_unlabeled"] == 255
    assert summary["val"] == 73
    assert summary["test"] == 36
    assert summary["train_labeled"] == 26


def test_split_is_patient_disjoint_and_complete():
    records = _records(30, studies_per_patient=2)
    split = patient_level_split(records, seed=3)
    train, val, test = patient_ids(split.train), patient_ids(split.val), patient_ids(split.test)
    assert not (train & val or train & test or val & test)
    assert train | val | test == patient_ids(records)
    assert len(split.train) + len(split.val) + len(split.test) == len(records)


def test_split_is_deterministic_in_seed():
    records = _records(40)
    a = patient_level_split(records, seed=5)
    b = patient_level_split(records, seed=5)
    c = patient_level_split(records, seed=6)
    assert [r.study_id for r in a.test] == [r.study_id for r in b.test]
    assert [r.study_id for r in a.train_labeled] == [r.study_id for r in b.train_labeled]
    assert patient_ids(a.test) != patient_ids(c.test)


def test_three_patients_give_one_each():
    split = patient_level_split(_records(3), seed=0)
    assert split.summary()["val"] == 1
    assert split.summary()["test"] == 1
    assert len(patient_ids(split.train)) == 1


def test_too_few_patients_rejected():
    with pytest.raises(ValueError):
        patient_level_split(_records(2))


def test_labeled_subset_keeps_patients_whole():
    records = _records(20, studies_per_patient=2)
    labeled, unlabeled = select_labeled_subset(records, 0.1, seed=0)
    assert len(patient_ids(labeled)) == 2
    assert len(labeled) == 4
    assert not patient_ids(labeled) & patient_ids(unlabeled)


def test_labeled_subset_has_at_least_one_patient():
    labeled, _ = select_labeled_subset(_records(3), 0.01, seed=0)
    assert len(patient_ids(labeled)) == 1


def test_labeled_subset_only_from_masked_patients():
    records = [make_record("A", with_masks=False, side=4), make_record("B", side=4)]
    labeled, unlabeled = select_labeled_subset(records, 0.5, seed=1)
    assert patient_ids(labeled) == {"B"}
    assert patient_ids(unlabeled) == {"A"}


def test_kfold_partition_covers_every_patient_once():
    records = _records(23)
    splits = kfold_patient_partition(records, k=5, seed=0)
    assert len(splits) == 5
    held_out = [patient_ids(s.test) for s in splits]
    assert sorted(len(h) for h in held_out) == [4, 4, 5, 5, 5]
    assert set().union(*held_out) == patient_ids(records)
    for i, a in enumerate(held_out):
        for b in held_out[i + 1 :]:
            assert not a & b
    for s in splits:
        assert s.val
        assert s.train_labeled
        assert patient_ids(s.train) | patient_ids(s.val) | patient_ids(s.test) == patient_ids(records)


def test_kfold_rejects_bad_k():
    with pytest.raises(ValueError):
        kfold_patient_partition(_records(10), k=1)
    with pytest.raises(ValueError):
        kfold_patient_partition(_records(3), k=5)
