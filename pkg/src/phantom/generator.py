"""合成超音波ファントム生成モジュール.

胃前庭部を楕円で表した二体位の超音波風画像と正解マスクを生成する。
胃内容量は前庭部面積に単調に対応付けられ、クラスごとに面積帯が
互いに素となるため、幾何から分類可能なデータになる。

- SUP 画像: 潜在シーンそのもの
- RLD 画像: 潜在シーンに回転・平行移動・拡大縮小を加えたもの
- ノイズ: 乗法性の対数正規スペックル + 高輝度の線状アーチファクト
"""

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np

from config.experiment import PhantomParams
from src.data.manifest import save_manifest
from src.data.records import (
    ContentClass,
    SegmentationMask,
    StudyRecord,
    UltrasoundImage,
    View,
)

logger = logging.getLogger(__name__)

# クラスごとの胃内容量の範囲 (mL)。I は閉区間、II/III は下端を含まない
VOLUME_RANGE_ML: dict[ContentClass, tuple[float, float]] = {
    ContentClass.I: (5.0, 50.0),
    ContentClass.II: (50.0, 100.0),
    ContentClass.III: (100.0, 200.0),
}

# 面積帯の内側 20% を目標とし、ラスタライズ誤差の余裕を残す
_BAND_MARGIN = 0.2
_ASPECT_RANGE = (1.2, 1.8)
_FIT_STEPS = 25

# 見た目のパラメータ
_LUMEN_LEVEL = 0.12
_WALL_GAIN = 0.4
_WALL_THICKNESS_PX = 1.5


@dataclass(frozen=True)
class AntrumGeometry:
    """画像座標系での楕円 (中心は行・列, 角度はラジアン)."""

    center_row: float
    center_col: float
    semi_major: float
    semi_minor: float
    angle: float

    def half_extent(self) -> tuple[float, float]:
        """外接矩形の半幅 (行方向, 列方向)."""
        c, s = np.cos(self.angle), np.sin(self.angle)
        a, b = self.semi_major, self.semi_minor
        return float(np.hypot(a * s, b * c)), float(np.hypot(a * c, b * s))


@dataclass(frozen=True)
class ViewTransform:
    """潜在シーンから視野への相似変換 (画像中心まわり)."""

    rotation: float = 0.0
    scale: float = 1.0
    shift_row: float = 0.0
    shift_col: float = 0.0


def _grid(side: int) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.mgrid[0:side, 0:side].astype(np.float64)
    return rows, cols


def ellipse_radius(geom: AntrumGeometry, side: int) -> np.ndarray:
    """各画素中心の楕円正規化半径 (≤1 が内部)."""
    rows, cols = _grid(side)
    dy = rows - geom.center_row
    dx = cols - geom.center_col
    c, s = np.cos(geom.angle), np.sin(geom.angle)
    u = dx * c + dy * s
    v = -dx * s + dy * c
    return np.sqrt((u / geom.semi_major) ** 2 + (v / geom.semi_minor) ** 2)


def rasterize_ellipse(geom: AntrumGeometry, side: int) -> np.ndarray:
    """楕円を画素中心判定でラスタライズ."""
    return (ellipse_radius(geom, side) <= 1.0).astype(np.uint8)


def area_band_pixels(params: PhantomParams, label: ContentClass) -> tuple[float, float]:
    """クラスの面積帯をピクセル数で返す."""
    lo, hi = params.antrum_area_range[label.name]
    n = params.image_side**2
    return lo * n, hi * n


def volume_to_area_fraction(params: PhantomParams, label: ContentClass, volume_ml: float) -> float:
    """胃内容量を目標面積率へ単調に写像."""
    v_lo, v_hi = VOLUME_RANGE_ML[label]
    lo, hi = params.antrum_area_range[label.name]
    inner_lo = lo + _BAND_MARGIN * (hi - lo)
    inner_hi = hi - _BAND_MARGIN * (hi - lo)
    t = float(np.clip((volume_ml - v_lo) / (v_hi - v_lo), 0.0, 1.0))
    return inner_lo + t * (inner_hi - inner_lo)


def sample_volume(label: ContentClass, rng: np.random.Generator) -> float:
    """クラス区間内の胃内容量をサンプル."""
    lo, hi = VOLUME_RANGE_ML[label]
    if label is ContentClass.I:
        return float(rng.uniform(lo, hi))
    # (lo, hi] 区間
    return float(hi - rng.uniform(0.0, hi - lo))


def _fit_to_area(
    geom: AntrumGeometry,
    side: int,
    target_px: float,
    band_px: tuple[float, float],
) -> AntrumGeometry:
    """半径を反復的に拡縮し、ラスタ面積を目標へ合わせる."""
    for _ in range(_FIT_STEPS):
        area = float(rasterize_ellipse(geom, side).sum())
        if band_px[0] <= area <= band_px[1] and abs(area - target_px) <= max(1.0, 0.02 * target_px):
            return geom
        factor = np.sqrt(target_px / max(area, 1.0))
        geom = replace(geom, semi_major=geom.semi_major * factor, semi_minor=geom.semi_minor * factor)
    area = float(rasterize_ellipse(geom, side).sum())
    if not band_px[0] <= area <= band_px[1]:
        raise ValueError(
            f"cannot rasterize an ellipse with area in {band_px} px on a {side}x{side} grid; "
            "increase image_side or widen antrum_area_range"
        )
    return geom


def _clamp_center(geom: AntrumGeometry, side: int) -> AntrumGeometry:
    """楕円が画像内に収まるよう中心を制限."""
    ey, ex = geom.half_extent()
    lo_r, hi_r = ey + 1.0, side - 2.0 - ey
    lo_c, hi_c = ex + 1.0, side - 2.0 - ex
    row = float(np.clip(geom.center_row, lo_r, hi_r)) if lo_r <= hi_r else (side - 1) / 2
    col = float(np.clip(geom.center_col, lo_c, hi_c)) if lo_c <= hi_c else (side - 1) / 2
    return replace(geom, center_row=row, center_col=col)


def sample_latent_geometry(
    params: PhantomParams,
    label: ContentClass,
    volume_ml: float,
    rng: np.random.Generator,
) -> AntrumGeometry:
    """潜在シーン (SUP 視野) の前庭部楕円をサンプル."""
    side = params.image_side
    target_px = volume_to_area_fraction(params, label, volume_ml) * side**2
    aspect = rng.uniform(*_ASPECT_RANGE)
    angle = rng.uniform(0.0, np.pi)
    semi_minor = np.sqrt(target_px / (np.pi * aspect))
    centre = (side - 1) / 2
    offset = rng.uniform(-0.08, 0.08, size=2) * side
    geom = AntrumGeometry(
        center_row=centre + offset[0],
        center_col=centre + offset[1],
        semi_major=semi_minor * aspect,
        semi_minor=semi_minor,
        angle=angle,
    )
    geom = _fit_to_area(geom, side, target_px, area_band_pixels(params, label))
    return _clamp_center(geom, side)


def sample_view_transform(
    params: PhantomParams,
    label: ContentClass,
    latent: AntrumGeometry,
    rng: np.random.Generator,
) -> ViewTransform:
    """RLD 視野の相似変換をサンプル（拡大率は面積帯内に制限）."""
    jitter = params.view_geometry_jitter
    side = params.image_side
    band_lo, band_hi = params.antrum_area_range[label.name]
    latent_frac = np.pi * latent.semi_major * latent.semi_minor / side**2
    s_lo = max(1.0 - jitter, np.sqrt(band_lo / latent_frac) * 1.02)
    s_hi = min(1.0 + jitter, np.sqrt(band_hi / latent_frac) * 0.98)
    scale = rng.uniform(s_lo, s_hi) if s_lo < s_hi else 1.0
    rotation = rng.uniform(-np.pi * jitter, np.pi * jitter)
    shift = rng.uniform(-jitter, jitter, size=2) * side * 0.5
    return ViewTransform(rotation=rotation, scale=float(scale), shift_row=shift[0], shift_col=shift[1])


def transform_geometry(geom: AntrumGeometry, t: ViewTransform, side: int) -> AntrumGeometry:
    """楕円を相似変換で写す."""
    centre = (side - 1) / 2
    dy, dx = geom.center_row - centre, geom.center_col - centre
    c, s = np.cos(t.rotation), np.sin(t.rotation)
    # 画像座標 (x=列, y=行) での回転
    new_dx = t.scale * (c * dx - s * dy)
    new_dy = t.scale * (s * dx + c * dy)
    return AntrumGeometry(
        center_row=centre + new_dy + t.shift_row,
        center_col=centre + new_dx + t.shift_col,
        semi_major=geom.semi_major * t.scale,
        semi_minor=geom.semi_minor * t.scale,
        angle=geom.angle + t.rotation,
    )


def _transform_onto(
    latent: AntrumGeometry,
    target: AntrumGeometry,
    rotation: float,
    side: int,
) -> ViewTransform:
    """latent を target へ写す変換（面積補正・中心制限後の背景整合用）."""
    scale = target.semi_major / latent.semi_major
    moved = transform_geometry(latent, ViewTransform(rotation=rotation, scale=scale), side)
    return ViewTransform(
        rotation=rotation,
        scale=scale,
        shift_row=target.center_row - moved.center_row,
        shift_col=target.center_col - moved.center_col,
    )


def _latent_coordinates(t: ViewTransform, side: int) -> tuple[np.ndarray, np.ndarray]:
    """視野の各画素を潜在シーン座標へ逆写像."""
    rows, cols = _grid(side)
    centre = (side - 1) / 2
    dy = rows - centre - t.shift_row
    dx = cols - centre - t.shift_col
    c, s = np.cos(t.rotation), np.sin(t.rotation)
    lx = (c * dx + s * dy) / t.scale
    ly = (-s * dx + c * dy) / t.scale
    return centre + ly, centre + lx


@dataclass(frozen=True)
class TissueTexture:
    """背景組織の潜在パラメータ."""

    layer_freq: float
    layer_phase: float
    layer_angle: float
    blobs: tuple[tuple[float, float, float, float], ...]

    @classmethod
    def sample(cls, side: int, rng: np.random.Generator) -> "TissueTexture":
        blobs = tuple(
            (
                float(rng.uniform(0, side)),
                float(rng.uniform(0, side)),
                float(rng.uniform(0.08, 0.2) * side),
                float(rng.uniform(-0.12, 0.12)),
            )
            for _ in range(4)
        )
        return cls(
            layer_freq=float(rng.uniform(2.0, 4.0)),
            layer_phase=float(rng.uniform(0, 2 * np.pi)),
            layer_angle=float(rng.uniform(-0.3, 0.3)),
            blobs=blobs,
        )

    def evaluate(self, rows: np.ndarray, cols: np.ndarray, side: int) -> np.ndarray:
        depth = (rows * np.cos(self.layer_angle) + cols * np.sin(self.layer_angle)) / side
        bg = 0.45 + 0.1 * np.sin(2 * np.pi * self.layer_freq * depth + self.layer_phase)
        for br, bc, radius, amp in self.blobs:
            bg = bg + amp * np.exp(-((rows - br) ** 2 + (cols - bc) ** 2) / (2 * radius**2))
        return np.clip(bg, 0.2, 0.75)


def render_clean(
    geom: AntrumGeometry,
    texture: TissueTexture,
    transform: ViewTransform,
    side: int,
) -> np.ndarray:
    """ノイズなしの視野画像を描画."""
    rows, cols = _latent_coordinates(transform, side)
    bg = texture.evaluate(rows, cols, side)
    rho = ellipse_radius(geom, side)
    inside = rho <= 1.0
    outside_px = np.maximum(rho - 1.0, 0.0) * geom.semi_minor
    wall = np.where(inside, 0.0, np.exp(-((outside_px / _WALL_THICKNESS_PX) ** 2)))
    image = np.where(inside, _LUMEN_LEVEL, bg + _WALL_GAIN * wall)
    return np.clip(image, 0.0, 1.0)


def add_noise(
    clean: np.ndarray,
    speckle_strength: float,
    n_artifacts: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """スペックルとアーチファクト線を加え、[0,1] に切り詰めて 8bit に量子化."""
    side = clean.shape[0]
    image = clean
    if speckle_strength > 0:
        z = rng.standard_normal(clean.shape)
        # 平均1の対数正規ノイズ
        image = image * np.exp(speckle_strength * z - 0.5 * speckle_strength**2)
    rows, cols = _grid(side)
    for _ in range(n_artifacts):
        r0, c0 = rng.uniform(0, side, size=2)
        theta = rng.uniform(0, np.pi)
        length = rng.uniform(0.2, 0.5) * side
        width = rng.uniform(0.6, 1.5)
        amp = rng.uniform(0.2, 0.4)
        along = (cols - c0) * np.cos(theta) + (rows - r0) * np.sin(theta)
        perp = -(cols - c0) * np.sin(theta) + (rows - r0) * np.cos(theta)
        image = image + amp * np.exp(-0.5 * (along / length) ** 2 - 0.5 * (perp / width) ** 2)
    image = np.clip(image, 0.0, 1.0)
    return np.rint(image * 255.0) / 255.0


def generate_study(
    params: PhantomParams,
    class_label: ContentClass | str,
    patient_id: str,
    seed: int,
    study_id: str | None = None,
) -> StudyRecord:
    """1症例分の二体位ファントムを生成.

    幾何・SUP ノイズ・RLD ノイズはシードから分岐した独立な乱数列で
    サンプルするため、マスクはノイズ設定に依存しない。

    Args:
        params: ファントム生成パラメータ
        class_label: 内容量クラス
        patient_id: 患者ID
        seed: 乱数シード
        study_id: 検査ID（省略時は "<patient_id>-S1"）

    Returns:
        StudyRecord: 画像・マスク・胃内容量を含むレコード
    """
    label = ContentClass.from_name(class_label) if isinstance(class_label, str) else ContentClass(class_label)
    study_id = study_id or f"{patient_id}-S1"
    side = params.image_side

    geom_ss, sup_ss, rld_ss = np.random.SeedSequence(seed).spawn(3)
    geom_rng = np.random.default_rng(geom_ss)

    volume = sample_volume(label, geom_rng)
    latent = sample_latent_geometry(params, label, volume, geom_rng)
    texture = TissueTexture.sample(side, geom_rng)
    transform = sample_view_transform(params, label, latent, geom_rng)

    band_px = area_band_pixels(params, label)
    rld_geom = transform_geometry(latent, transform, side)
    margin = _BAND_MARGIN * (band_px[1] - band_px[0])
    rld_area = np.pi * rld_geom.semi_major * rld_geom.semi_minor
    rld_target = float(np.clip(rld_area, band_px[0] + margin, band_px[1] - margin))
    rld_geom = _clamp_center(_fit_to_area(rld_geom, side, rld_target, band_px), side)
    transform = _transform_onto(latent, rld_geom, transform.rotation, side)

    sup_clean = render_clean(latent, texture, ViewTransform(), side)
    rld_clean = render_clean(rld_geom, texture, transform, side)
    sup_pixels = add_noise(sup_clean, params.speckle_strength, params.n_artifacts, np.random.default_rng(sup_ss))
    rld_pixels = add_noise(rld_clean, params.speckle_strength, params.n_artifacts, np.random.default_rng(rld_ss))

    return StudyRecord(
        patient_id=patient_id,
        study_id=study_id,
        rld=UltrasoundImage(rld_pixels, View.RLD, patient_id, study_id),
        sup=UltrasoundImage(sup_pixels, View.SUP, patient_id, study_id),
        label=label,
        volume_ml=volume,
        rld_mask=SegmentationMask(rasterize_ellipse(rld_geom, side)),
        sup_mask=SegmentationMask(rasterize_ellipse(latent, side)),
    )


def sample_class_labels(n_patients: int, class_priors: tuple[float, ...], seed: int) -> list[ContentClass]:
    """事前分布に従ってクラスをサンプル."""
    if n_patients <= 0:
        raise ValueError(f"n_patients must be positive, got {n_patients}")
    priors = np.asarray(class_priors, dtype=np.float64)
    if priors.shape != (len(ContentClass),) or np.any(priors < 0) or abs(priors.sum() - 1.0) > 1e-6:
        raise ValueError(f"class_priors must be 3 non-negative values summing to 1, got {class_priors}")
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    draws = rng.choice(len(ContentClass), size=n_patients, p=priors / priors.sum())
    return [ContentClass(int(d)) for d in draws]


def generate_dataset(
    params: PhantomParams,
    n_patients: int,
    class_priors: tuple[float, ...],
    seed: int,
    out_dir: str | Path | None = None,
) -> tuple[list[StudyRecord], Path | None]:
    """ファントムデータセットを生成し、必要ならマニフェストを書き出す.

    Args:
        params: ファントム生成パラメータ
        n_patients: 患者数
        class_priors: クラス事前分布 (I, II, III)
        seed: 乱数シード
        out_dir: 出力ディレクトリ（None なら書き出さない）

    Returns:
        (レコード, マニフェストのパス)
    """
    labels = sample_class_labels(n_patients, class_priors, seed)
    child_seeds = np.random.SeedSequence(seed).spawn(n_patients + 1)[1:]

    records = []
    for i, (label, ss) in enumerate(zip(labels, child_seeds, strict=True), start=1):
        patient_seed = int(ss.generate_state(1)[0])
        records.append(generate_study(params, label, f"P{i:04d}", patient_seed))

    counts = {c.name: sum(1 for r in records if r.label is c) for c in ContentClass}
    logger.info(f"Generated {n_patients} phantom studies (seed={seed}): {counts}")

    manifest_path = None
    if out_dir is not None:
        out = Path(out_dir)
        manifest_path = save_manifest(records, out / "manifest.jsonl")
        report: dict[str, Any] = {
            "seed": seed,
            "n_patients": n_patients,
            "class_priors": list(class_priors),
            "class_counts": counts,
            "params": params.model_dump(mode="json"),
        }
        with open(out / "generation_report.json", "w", encoding="utf-8") as f:
            json.dump(report, f, indent=2, sort_keys=True)
    return records, manifest_path
