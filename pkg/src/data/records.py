"""ドメイン型モジュール.

超音波画像・セグメンテーションマスク・確率マップ・症例レコード・
データ分割を不変なデータクラスとして定義する。
画素配列は読み取り専用のコピーとして保持する。
"""

import logging
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Any

import numpy as np

logger = logging.getLogger(__name__)

# クラス境界 (mL)
CLASS_I_MAX_ML = 50.0
CLASS_II_MAX_ML = 100.0


class View(str, Enum):
    """撮像体位."""

    RLD = "RLD"
    SUP = "SUP"


class ContentClass(IntEnum):
    """胃内容量クラス (I: V≤50, II: 50<V≤100, III: V>100)."""

    I = 0  # noqa: E741
    II = 1
    III = 2

    @classmethod
    def from_name(cls, name: str) -> "ContentClass":
        """名前 ("I" / "II" / "III") からクラスを取得."""
        try:
            return cls[name]
        except KeyError:
            raise ValueError(f"label must be one of I, II, III (got {name!r})") from None


def label_for_volume(volume_ml: float) -> ContentClass:
    """胃内容量からクラスを決定.

    Args:
        volume_ml: 胃内容量 (mL)

    Returns:
        ContentClass: 対応するクラス
    """
    if volume_ml < 0 or not np.isfinite(volume_ml):
        raise ValueError(f"volume_ml must be a finite non-negative number, got {volume_ml}")
    if volume_ml <= CLASS_I_MAX_ML:
        return ContentClass.I
    if volume_ml <= CLASS_II_MAX_ML:
        return ContentClass.II
    return ContentClass.III


def _frozen_array(values: Any, dtype: Any) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class UltrasoundImage:
    """超音波画像.

    Attributes:
        pixels: H×W の輝度配列（[0, 1]）
        view: 撮像体位
        patient_id: 患者ID
        study_id: 検査ID
    """

    pixels: np.ndarray
    view: View
    patient_id: str
    study_id: str

    def __post_init__(self) -> None:
        pixels = _frozen_array(self.pixels, np.float64)
        if pixels.ndim != 2 or pixels.shape[0] != pixels.shape[1]:
            raise ValueError(f"image must be a square 2-D array, got shape {pixels.shape}")
        if not np.all(np.isfinite(pixels)) or pixels.min() < 0.0 or pixels.max() > 1.0:
            raise ValueError("image pixels must lie in [0, 1]")
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "view", View(self.view))

    @property
    def side(self) -> int:
        """一辺のピクセル数."""
        return int(self.pixels.shape[0])


@dataclass(frozen=True, eq=False)
class SegmentationMask:
    """二値セグメンテーションマスク (1 = 胃前庭部)."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        pixels = _frozen_array(self.pixels, np.uint8)
        if pixels.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {pixels.shape}")
        if not np.isin(pixels, (0, 1)).all():
            raise ValueError("mask values must be 0 or 1")
        object.__setattr__(self, "pixels", pixels)

    @property
    def area(self) -> int:
        """前景ピクセル数."""
        return int(self.pixels.sum())


@dataclass(frozen=True, eq=False)
class ProbabilityMap:
    """前景確率マップ."""

    foreground: np.ndarray

    def __post_init__(self) -> None:
        fg = _frozen_array(self.foreground, np.float64)
        if fg.ndim != 2:
            raise ValueError(f"probability map must be 2-D, got shape {fg.shape}")
        if not np.all(np.isfinite(fg)) or fg.min() < 0.0 or fg.max() > 1.0:
            raise ValueError("probability map values must lie in [0, 1]")
        object.__setattr__(self, "foreground", fg)

    @classmethod
    def ones(cls, side: int) -> "ProbabilityMap":
        """全画素 1 の確率マップ（誘導なし）."""
        return cls(np.ones((side, side)))


@dataclass(frozen=True, eq=False)
class StudyRecord:
    """二視野の症例レコード.

    Attributes:
        patient_id: 患者ID
        study_id: 検査ID
        rld: RLD 画像
        sup: SUP 画像
        label: 内容量クラス
        volume_ml: 胃内容量 (mL)
        rld_mask: RLD のマスク
        sup_mask: SUP のマスク
    """

    patient_id: str
    study_id: str
    rld: UltrasoundImage
    sup: UltrasoundImage
    label: ContentClass
    volume_ml: float | None = None
    rld_mask: SegmentationMask | None = None
    sup_mask: SegmentationMask | None = None

    def __post_init__(self) -> None:
        if not self.patient_id:
            raise ValueError("patient_id must be non-empty")
        object.__setattr__(self, "label", ContentClass(self.label))
        if self.rld.view is not View.RLD or self.sup.view is not View.SUP:
            raise ValueError("rld/sup images carry the wrong view tag")
        for image in (self.rld, self.sup):
            if image.patient_id != self.patient_id:
                raise ValueError(
                    f"view patient_id {image.patient_id!r} differs from record {self.patient_id!r}"
                )
        if self.rld.pixels.shape != self.sup.pixels.shape:
            raise ValueError("RLD and SUP images must have the same shape")
        for name, mask, image in (
            ("rld_mask", self.rld_mask, self.rld),
            ("sup_mask", self.sup_mask, self.sup),
        ):
            if mask is not None and mask.pixels.shape != image.pixels.shape:
                raise ValueError(f"{name} shape {mask.pixels.shape} != image shape {image.pixels.shape}")
        if self.volume_ml is not None:
            expected = label_for_volume(self.volume_ml)
            if expected is not self.label:
                raise ValueError(
                    f"label {self.label.name} inconsistent with volume {self.volume_ml} mL "
                    f"(expected {expected.name})"
                )

    @property
    def has_masks(self) -> bool:
        """両視野のマスクを持つか."""
        return self.rld_mask is not None and self.sup_mask is not None

    def image(self, view: View) -> UltrasoundImage:
        """指定体位の画像を取得."""
        return self.rld if View(view) is View.RLD else self.sup

    def mask(self, view: View) -> SegmentationMask | None:
        """指定体位のマスクを取得."""
        return self.rld_mask if View(view) is View.RLD else self.sup_mask


@dataclass(frozen=True)
class DatasetSplit:
    """患者単位のデータ分割."""

    train_labeled: tuple[StudyRecord, ...] = field(default_factory=tuple)
    train_unlabeled: tuple[StudyRecord, ...] = field(default_factory=tuple)
    val: tuple[StudyRecord, ...] = field(default_factory=tuple)
    test: tuple[StudyRecord, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        for name in ("train_labeled", "train_unlabeled", "val", "test"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        groups = {
            "train": patient_ids(self.train),
            "val": patient_ids(self.val),
            "test": patient_ids(self.test),
        }
        for a, b in (("train", "val"), ("train", "test"), ("val", "test")):
            shared = groups[a] & groups[b]
            if shared:
                raise ValueError(f"patients shared between {a} and {b}: {sorted(shared)}")

    @property
    def train(self) -> tuple[StudyRecord, ...]:
        """ラベル有無を問わない学習データ."""
        return self.train_labeled + self.train_unlabeled

    def summary(self) -> dict[str, int]:
        """各区分の患者数."""
        return {
            "train_labeled": len(patient_ids(self.train_labeled)),
            "train_unlabeled": len(patient_ids(self.train_unlabeled)),
            "val": len(patient_ids(self.val)),
            "test": len(patient_ids(self.test)),
        }


def patient_ids(records: Any) -> set[str]:
    """レコード列の患者ID集合."""
    return {r.patient_id for r in records}
