"""患者単位のデータ分割モジュール.

学習/検証/テストへの分割と k-fold 交差検証の分割を、
同一患者が複数区分に跨らないように行う。
いずれも (records, seed) の純関数。
"""

import logging
from collections.abc import Sequence

import numpy as np

from src.data.records import DatasetSplit, StudyRecord

logger = logging.getLogger(__name__)

DEFAULT_RATIOS = (7.0, 2.0, 1.0)


def _sorted_patients(records: Sequence[StudyRecord]) -> list[str]:
    ids = set()
    for r in records:
        if not r.patient_id:
            raise ValueError("every record needs a non-empty patient_id")
        ids.add(r.patient_id)
    return sorted(ids)


def _records_of(records: Sequence[StudyRecord], patients: set[str]) -> list[StudyRecord]:
    return [r for r in records if r.patient_id in patients]


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _check_ratios(ratios: Sequence[float]) -> tuple[float, float, float]:
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be three positive numbers, got {ratios}")
    return float(ratios[0]), float(ratios[1]), float(ratios[2])


def select_labeled_subset(
    train_records: Sequence[StudyRecord],
    fraction: float,
    seed: int | Sequence[int],
) -> tuple[list[StudyRecord], list[StudyRecord]]:
    """学習データからラベル付き患者を選ぶ.

    患者単位で選択し、選ばれた患者の全検査をラベル付きとする。
    候補はマスクを持つ患者に限る。

    Args:
        train_records: 学習レコード
        fraction: ラベル付き患者の割合 (0, 1]
        seed: 乱数シード

    Returns:
        (ラベル付き, ラベルなし) のレコードリスト
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if not train_records:
        return [], []

    patients = _sorted_patients(train_records)
    candidates = [
        pid for pid in patients
        if all(r.has_masks for r in train_records if r.patient_id == pid)
    ]
    if not candidates:
        raise ValueError("no training patient has segmentation masks; cannot build a labeled subset")

    n_labeled = min(len(candidates), max(1, _round_half_up(fraction * len(patients))))
    rng = np.random.default_rng(seed)
    chosen = set(rng.permutation(np.array(candidates, dtype=object))[:n_labeled].tolist())

    labeled = _records_of(train_records, chosen)
    unlabeled = [r for r in train_records if r.patient_id not in chosen]
    logger.debug(f"Selected {len(chosen)}/{len(patients)} labeled patients")
    return labeled, unlabeled


def patient_level_split(
    records: Sequence[StudyRecord],
    ratios: Sequence[float] = DEFAULT_RATIOS,
    seed: int = 0,
    labeled_fraction: float = 0.1,
) -> DatasetSplit:
    """患者単位で train/val/test に分割.

    val と test の患者数は比率から四捨五入（各1人以上）で決め、
    残りを train に割り当てる。切り捨てではなく四捨五入なので、
    364 人は 255 / 73 / 36 人に分かれる（切り捨てなら 256 / 72 / 36）。

    Args:
        records: 全レコード
        ratios: train:val:test の比率
        seed: 乱数シード
        labeled_fraction: 学習患者のうちラベル付きとする割合

    Returns:
        DatasetSplit: 分割結果

    Raises:
        ValueError: 患者が3人未満、または比率が不正な場合
    """
    r_train, r_val, r_test = _check_ratios(ratios)
    patients = _sorted_patients(records)
    n = len(patients)
    if n < 3:
        raise ValueError(f"need at least 3 distinct patients to split, got {n}")

    total = r_train + r_val + r_test
    n_val = max(1, _round_half_up(n * r_val / total))
    n_test = max(1, _round_half_up(n * r_test / total))
    while n - n_val - n_test < 1:
        if n_val >= n_test and n_val > 1:
            n_val -= 1
        else:
            n_test -= 1

    rng = np.random.default_rng(seed)
    order = rng.permutation(np.array(patients, dtype=object)).tolist()
    test_ids = set(order[:n_test])
    val_ids = set(order[n_test : n_test + n_val])
    train_ids = set(order[n_test + n_val :])

    train = _records_of(records, train_ids)
    labeled, unlabeled = select_labeled_subset(train, labeled_fraction, (seed, 1))

    split = DatasetSplit(
        train_labeled=labeled,
        train_unlabeled=unlabeled,
        val=_records_of(records, val_ids),
        test=_records_of(records, test_ids),
    )
    logger.info(f"Patient-level split (seed={seed}): {split.summary()}")
    return split


def kfold_patient_partition(
    records: Sequence[StudyRecord],
    k: int = 5,
    seed: int = 0,
    ratios: Sequence[float] = DEFAULT_RATIOS,
    labeled_fraction: float = 0.1,
) -> list[DatasetSplit]:
    """k-fold 交差検証の分割を作る.

    患者を k 個のほぼ等しいフォールドに分け、各フォールドをテストとして
    残りを train:val = ratios[0]:ratios[1] で分割する。

    Args:
        records: 全レコード
        k: フォールド数
        seed: 乱数シード
        ratios: train:val:test の比率（val の割合のみ使用）
        labeled_fraction: 学習患者のうちラベル付きとする割合

    Returns:
        list[DatasetSplit]: k 個の分割
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    r_train, r_val, _ = _check_ratios(ratios)
    patients = _sorted_patients(records)
    if len(patients) < k:
        raise ValueError(f"need at least k={k} distinct patients, got {len(patients)}")

    rng = np.random.default_rng(seed)
    order = rng.permutation(np.array(patients, dtype=object)).tolist()
    folds = [list(chunk) for chunk in np.array_split(np.array(order, dtype=object), k)]

    splits = []
    for i, held_out in enumerate(folds):
        rest = [pid for j, fold in enumerate(folds) if j != i for pid in fold]
        n_val = max(1, _round_half_up(len(rest) * r_val / (r_train + r_val)))
        n_val = min(n_val, len(rest) - 1)
        val_ids = set(rest[:n_val])
        train_ids = set(rest[n_val:])

        train = _records_of(records, train_ids)
        labeled, unlabeled = select_labeled_subset(train, labeled_fraction, (seed, 2, i))
        splits.append(
            DatasetSplit(
                train_labeled=labeled,
                train_unlabeled=unlabeled,
                val=_records_of(records, val_ids),
                test=_records_of(records, set(held_out)),
            )
        )
    logger.info(f"Built {k}-fold patient partition over {len(patients)} patients (seed={seed})")
    return splits
