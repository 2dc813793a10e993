"""データセットマニフェストモジュール.

1行1レコードの JSON Lines 形式でデータセットを読み書きする。
画像は 8bit グレースケール PNG、マスクは {0, 255} の 8bit PNG として
マニフェストからの相対パスで保存する。
"""

import json
import logging
from pathlib import Path
from typing import Any, Literal

import numpy as np
from PIL import Image
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from src.data.records import (
    ContentClass,
    SegmentationMask,
    StudyRecord,
    UltrasoundImage,
    View,
)

logger = logging.getLogger(__name__)

IMAGE_DIR = "images"
MASK_DIR = "masks"


class ManifestError(ValueError):
    """マニフェストの解析エラー.

    Attributes:
        problems: 行ごとの問題点のリスト
    """

    def __init__(self, path: str | Path, problems: list[str]):
        self.path = str(path)
        self.problems = list(problems)
        details = "\n".join(f"  - {p}" for p in self.problems)
        super().__init__(f"Invalid manifest {self.path} ({len(self.problems)} problem(s)):\n{details}")


class ManifestEntry(BaseModel):
    """マニフェスト1行分のスキーマ."""

    model_config = ConfigDict(extra="forbid")

    patient_id: str = Field(min_length=1)
    study_id: str = Field(min_length=1)
    rld_path: str = Field(min_length=1)
    sup_path: str = Field(min_length=1)
    label: Literal["I", "II", "III"]
    volume_ml: float | None = Field(default=None, ge=0.0)
    rld_mask_path: str | None = None
    sup_mask_path: str | None = None


# ==================== PNG 入出力 ====================


def read_image_png(path: str | Path) -> np.ndarray:
    """8bit PNG を [0, 1] の float 配列として読み込む."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.float64)
    return arr / 255.0


def write_image_png(pixels: np.ndarray, path: str | Path) -> None:
    """[0, 1] の配列を 8bit PNG として保存."""
    levels = np.clip(np.rint(np.asarray(pixels, dtype=np.float64) * 255.0), 0, 255)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(levels.astype(np.uint8)).save(path)


def read_mask_png(path: str | Path) -> np.ndarray:
    """{0, 255} のマスク PNG を {0, 1} 配列として読み込む."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    if not np.isin(arr, (0, 255)).all():
        raise ValueError(f"mask {path} contains values other than 0 and 255")
    return (arr // 255).astype(np.uint8)


def write_mask_png(pixels: np.ndarray, path: str | Path) -> None:
    """{0, 1} のマスクを {0, 255} の PNG として保存."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray((np.asarray(pixels, dtype=np.uint8) * 255).astype(np.uint8)).save(path)


# ==================== マニフェスト ====================


def _build_record(entry: ManifestEntry, root: Path) -> StudyRecord:
    """エントリから StudyRecord を構築."""
    rld_mask = sup_mask = None
    if entry.rld_mask_path is not None:
        rld_mask = SegmentationMask(read_mask_png(root / entry.rld_mask_path))
    if entry.sup_mask_path is not None:
        sup_mask = SegmentationMask(read_mask_png(root / entry.sup_mask_path))
    return StudyRecord(
        patient_id=entry.patient_id,
        study_id=entry.study_id,
        rld=UltrasoundImage(read_image_png(root / entry.rld_path), View.RLD, entry.patient_id, entry.study_id),
        sup=UltrasoundImage(read_image_png(root / entry.sup_path), View.SUP, entry.patient_id, entry.study_id),
        label=ContentClass.from_name(entry.label),
        volume_ml=entry.volume_ml,
        rld_mask=rld_mask,
        sup_mask=sup_mask,
    )


def load_manifest(path: str | Path) -> list[StudyRecord]:
    """マニフェストを読み込む.

    Args:
        path: マニフェスト (JSON Lines) のパス

    Returns:
        list[StudyRecord]: 読み込んだレコード

    Raises:
        FileNotFoundError: マニフェストが存在しない場合
        ManifestError: いずれかの行が不正な場合（全行の問題を列挙）
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Manifest not found: {path}")
    root = path.parent

    records: list[StudyRecord] = []
    problems: list[str] = []
    seen_studies: set[str] = set()

    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
                entry = ManifestEntry.model_validate(payload)
            except json.JSONDecodeError as e:
                problems.append(f"line {line_no}: not valid JSON ({e.msg})")
                continue
            except ValidationError as e:
                for err in e.errors():
                    loc = ".".join(str(part) for part in err["loc"]) or "<entry>"
                    problems.append(f"line {line_no}: {loc}: {err['msg']}")
                continue

            if entry.study_id in seen_studies:
                problems.append(f"line {line_no}: duplicate study_id {entry.study_id!r}")
                continue
            seen_studies.add(entry.study_id)

            try:
                records.append(_build_record(entry, root))
            except (OSError, ValueError) as e:
                problems.append(f"line {line_no}: {e}")

    if problems:
        raise ManifestError(path, problems)

    logger.info(f"Loaded {len(records)} records from {path}")
    return records


def _entry_for(record: StudyRecord) -> dict[str, Any]:
    sid = record.study_id
    entry: dict[str, Any] = {
        "patient_id": record.patient_id,
        "study_id": sid,
        "rld_path": f"{IMAGE_DIR}/{sid}_rld.png",
        "sup_path": f"{IMAGE_DIR}/{sid}_sup.png",
        "label": record.label.name,
    }
    if record.volume_ml is not None:
        entry["volume_ml"] = float(record.volume_ml)
    if record.rld_mask is not None:
        entry["rld_mask_path"] = f"{MASK_DIR}/{sid}_rld.png"
    if record.sup_mask is not None:
        entry["sup_mask_path"] = f"{MASK_DIR}/{sid}_sup.png"
    return entry


def save_manifest(records: list[StudyRecord], path: str | Path) -> Path:
    """レコードをマニフェストと PNG 群として保存.

    画素は 8bit に量子化される。k/255 の格子上にある画像は
    読み込み後に同一の値へ戻る。

    Args:
        records: 保存するレコード
        path: マニフェストの保存先

    Returns:
        Path: 保存したマニフェストのパス
    """
    path = Path(path)
    root = path.parent
    root.mkdir(parents=True, exist_ok=True)

    lines = []
    for record in records:
        entry = _entry_for(record)
        write_image_png(record.rld.pixels, root / entry["rld_path"])
        write_image_png(record.sup.pixels, root / entry["sup_path"])
        if record.rld_mask is not None:
            write_mask_png(record.rld_mask.pixels, root / entry["rld_mask_path"])
        if record.sup_mask is not None:
            write_mask_png(record.sup_mask.pixels, root / entry["sup_mask_path"])
        lines.append(json.dumps(entry, sort_keys=True))

    with open(path, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(line + "\n")

    logger.info(f"Saved manifest with {len(records)} records to {path}")
    return path
