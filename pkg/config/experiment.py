"""実験設定モジュール.

合成データ生成・セグメンテーション・分類器学習・交差検証の
ハイパーパラメータを宣言的に記述する。YAML ファイルから読み込み、
プリセット (paper / desk) の上に上書きマージしてから検証する。
"""

import copy
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SCHEMA_VERSION = 1

ClassName = Literal["I", "II", "III"]
FusionKind = Literal["weighted_logits", "concat", "sum", "gated", "se", "cross_attention"]
PresetName = Literal["paper", "desk"]

# Table 2 の症例数 (868 / 664 / 642) に比例する事前分布
DEFAULT_CLASS_PRIORS = (868 / 2174, 664 / 2174, 642 / 2174)


class _FrozenModel(BaseModel):
    """設定モデル共通の基底クラス."""

    model_config = ConfigDict(frozen=True, extra="forbid")


class PhantomParams(_FrozenModel):
    """合成ファントム生成パラメータ.

    Attributes:
        image_side: 画像の一辺のピクセル数
        antrum_area_range: クラスごとの胃前庭部面積の範囲（画像面積に対する割合）
        speckle_strength: 乗法性スペックルの強度（対数正規分布の σ）
        n_artifacts: 高輝度アーチファクト線の本数
        view_geometry_jitter: RLD 視野のアフィン変換の揺らぎ幅
    """

    image_side: int = Field(default=256, ge=16)
    antrum_area_range: dict[ClassName, tuple[float, float]] = Field(
        default_factory=lambda: {
            "I": (0.03, 0.07),
            "II": (0.09, 0.14),
            "III": (0.16, 0.24),
        }
    )
    speckle_strength: float = Field(default=0.35, ge=0.0)
    n_artifacts: int = Field(default=3, ge=0)
    view_geometry_jitter: float = Field(default=0.15, ge=0.0, le=0.5)

    @field_validator("antrum_area_range")
    @classmethod
    def check_area_bands(
        cls, v: dict[str, tuple[float, float]]
    ) -> dict[str, tuple[float, float]]:
        """面積範囲が (0, 0.5) 内で互いに素かつ I < II < III であることを確認."""
        if set(v) != {"I", "II", "III"}:
            raise ValueError("antrum_area_range needs exactly the keys I, II, III")
        previous_hi = 0.0
        for name in ("I", "II", "III"):
            lo, hi = v[name]
            if not 0.0 < lo < hi < 0.5:
                raise ValueError(f"area band {name}={v[name]} must satisfy 0 < lo < hi < 0.5")
            if lo <= previous_hi:
                raise ValueError(f"area band {name} overlaps or precedes the previous class")
            previous_hi = hi
        return v


class SegNetConfig(_FrozenModel):
    """セグメンテーションネットワーク (U-Net) 設定."""

    in_channels: int = Field(default=1, ge=1)
    out_channels: Literal[2] = 2
    depth: int = Field(default=4, ge=2)
    base_width: int = Field(default=64, ge=4)


class SegTrainingConfig(_FrozenModel):
    """ステージ1 (事前学習 + 平均教師 BCP) の学習設定.

    iterations は事前学習を含む総反復数で、そのうち pretrain_fraction を
    ラベル付きデータのみの教師あり事前学習に割り当てる。
    """

    iterations: int = Field(default=30000, ge=2)
    labeled_batch_size: int = Field(default=12, ge=1)
    unlabeled_batch_size: int = Field(default=12, ge=1)
    lr: float = Field(default=0.01, gt=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=1e-4, ge=0.0)
    lr_power: float = Field(default=0.9, ge=0.0)
    ema_alpha: float = Field(default=0.99, ge=0.0, lt=1.0)
    patch_area_band: tuple[float, float] = (0.2, 0.3)
    pretrain_fraction: float = Field(default=0.1, gt=0.0, lt=1.0)
    eval_interval: int = Field(default=1000, ge=1)
    log_interval: int = Field(default=100, ge=1)

    @model_validator(mode="after")
    def check_batches_and_band(self) -> "SegTrainingConfig":
        """バッチの対応付けとパッチ面積帯の妥当性を確認."""
        if self.labeled_batch_size != self.unlabeled_batch_size:
            raise ValueError("labeled and unlabeled batch sizes must match for BCP pairing")
        lo, hi = self.patch_area_band
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError(f"patch_area_band {self.patch_area_band} must lie in (0, 1]")
        return self

    @property
    def pretrain_iterations(self) -> int:
        """教師あり事前学習の反復数."""
        return max(1, round(self.iterations * self.pretrain_fraction))

    @property
    def semi_supervised_iterations(self) -> int:
        """平均教師 BCP の反復数."""
        return max(1, self.iterations - self.pretrain_iterations)


class ClassifierConfig(_FrozenModel):
    """分類器バックボーン設定.

    blocks はバックボーンのステージごとの層数を表す
    （densenet-like: dense layer 数, resnet-like: residual block 数,
    plain-cnn: 畳み込み層数）。
    """

    backbone_name: str = "densenet-like"
    n_cls: int = Field(default=3, ge=2)
    in_channels: int = Field(default=1, ge=1)
    width_scale: float = Field(default=1.0, gt=0.0, le=1.0)
    blocks: tuple[int, ...] = (6, 12, 24, 16)

    @field_validator("blocks")
    @classmethod
    def check_blocks(cls, v: tuple[int, ...]) -> tuple[int, ...]:
        """各ステージが1層以上であることを確認."""
        if not v or any(b < 1 for b in v):
            raise ValueError(f"blocks must be a non-empty list of positive ints, got {v}")
        return v


class FusionSpec(_FrozenModel):
    """二視野の融合方式.

    beta は weighted_logits のときのみ指定する。
    """

    kind: FusionKind = "weighted_logits"
    beta: float | None = Field(default=None, ge=0.0, le=1.0)

    @model_validator(mode="before")
    @classmethod
    def fill_default_beta(cls, data: Any) -> Any:
        """weighted_logits で beta 未指定なら 0.7 を補う."""
        if isinstance(data, dict):
            kind = data.get("kind", "weighted_logits")
            if kind == "weighted_logits" and data.get("beta") is None:
                data = {**data, "beta": 0.7}
        return data

    @model_validator(mode="after")
    def check_beta_presence(self) -> "FusionSpec":
        """beta が weighted_logits のときに限り存在することを確認."""
        if (self.beta is not None) != (self.kind == "weighted_logits"):
            raise ValueError("beta must be set iff kind == 'weighted_logits'")
        return self


class DbfcConfig(_FrozenModel):
    """ステージ2 (確率マップ誘導 + 二分岐融合分類器) の設定."""

    backbone: ClassifierConfig = Field(default_factory=ClassifierConfig)
    gamma: float = Field(default=0.5, ge=0.0, le=1.0)
    fusion: FusionSpec = Field(default_factory=FusionSpec)
    u: float = Field(default=0.3, ge=0.0)
    focusing: float = Field(default=2.0, ge=0.0)
    class_weights: Literal["inverse_frequency", "none"] | tuple[float, ...] = "inverse_frequency"
    focal_floor: float = Field(default=1e-8, gt=0.0, lt=1.0)
    epochs: int = Field(default=120, ge=1)
    batch_size: int = Field(default=8, ge=1)
    lr: float = Field(default=0.01, gt=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=1e-4, ge=0.0)
    view_mode: Literal["dual", "rld", "sup"] = "dual"
    use_pmg: bool = True

    @model_validator(mode="after")
    def check_class_weights(self) -> "DbfcConfig":
        """明示的なクラス重みの長さと符号を確認."""
        if isinstance(self.class_weights, tuple):
            if len(self.class_weights) != self.backbone.n_cls:
                raise ValueError("class_weights length must equal n_cls")
            if any(w < 0 for w in self.class_weights):
                raise ValueError("class_weights must be non-negative")
        return self


class ExperimentConfig(_FrozenModel):
    """実験全体の宣言的な設定."""

    schema_version: Literal[1] = SCHEMA_VERSION
    preset: PresetName = "paper"
    seed: int = Field(default=0, ge=0)
    k_folds: int = Field(default=5, ge=2)
    n_patients: int = Field(default=364, ge=1)
    class_priors: tuple[float, float, float] = DEFAULT_CLASS_PRIORS
    split_ratios: tuple[float, float, float] = (7.0, 2.0, 1.0)
    labeled_fraction: float = Field(default=0.1, gt=0.0, le=1.0)
    seg_setting: Literal["bcp", "supervised_labeled", "supervised_full"] = "bcp"
    output_dir: str | None = None
    phantom: PhantomParams = Field(default_factory=PhantomParams)
    segnet: SegNetConfig = Field(default_factory=SegNetConfig)
    seg_training: SegTrainingConfig = Field(default_factory=SegTrainingConfig)
    dbfc: DbfcConfig = Field(default_factory=DbfcConfig)

    @field_validator("class_priors")
    @classmethod
    def check_priors(cls, v: tuple[float, float, float]) -> tuple[float, float, float]:
        """事前分布が非負で合計1であることを確認."""
        if any(p < 0 for p in v) or abs(sum(v) - 1.0) > 1e-6:
            raise ValueError(f"class_priors must be non-negative and sum to 1, got {v}")
        return v

    @field_validator("split_ratios")
    @classmethod
    def check_ratios(cls, v: tuple[float, float, float]) -> tuple[float, float, float]:
        """分割比が正であることを確認."""
        if any(r <= 0 for r in v):
            raise ValueError(f"split_ratios must be positive, got {v}")
        return v

    def to_dict(self) -> dict[str, Any]:
        """辞書形式に変換."""
        return self.model_dump(mode="json")


# ==================== プリセット ====================

_PRESETS: dict[str, dict[str, Any]] = {
    "paper": {
        "preset": "paper",
        "n_patients": 364,
        "phantom": {"image_side": 256},
        "segnet": {"depth": 4, "base_width": 64},
        "seg_training": {
            "iterations": 30000,
            "labeled_batch_size": 12,
            "unlabeled_batch_size": 12,
            "eval_interval": 1000,
            "log_interval": 100,
        },
        "dbfc": {
            "backbone": {"backbone_name": "densenet-like", "width_scale": 1.0, "blocks": [6, 12, 24, 16]},
            "epochs": 120,
        },
    },
    "desk": {
        "preset": "desk",
        "n_patients": 60,
        "phantom": {"image_side": 64},
        "segnet": {"depth": 4, "base_width": 16},
        "seg_training": {
            "iterations": 600,
            "labeled_batch_size": 4,
            "unlabeled_batch_size": 4,
            "eval_interval": 100,
            "log_interval": 50,
        },
        "dbfc": {
            "backbone": {"backbone_name": "densenet-like", "width_scale": 0.25, "blocks": [2, 2, 2]},
            "epochs": 15,
        },
    },
}


def _deep_merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    """ネストした辞書を再帰的にマージ（override 優先）."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def preset_config(name: PresetName = "paper") -> ExperimentConfig:
    """プリセット設定を取得.

    Args:
        name: プリセット名 (paper / desk)

    Returns:
        ExperimentConfig: 検証済み設定
    """
    if name not in _PRESETS:
        raise ValueError(f"Unknown preset '{name}'. Available: {sorted(_PRESETS)}")
    return ExperimentConfig.model_validate(_PRESETS[name])


def apply_overrides(config: ExperimentConfig, overrides: dict[str, Any]) -> ExperimentConfig:
    """ドット区切りキーで設定を上書きし、再検証する.

    Args:
        config: 元の設定
        overrides: {"dbfc.gamma": 0.3, ...} 形式の上書き

    Returns:
        ExperimentConfig: 上書き後の設定
    """
    data = config.model_dump(mode="python")
    for dotted, value in overrides.items():
        node = data
        *parents, leaf = dotted.split(".")
        for part in parents:
            node = node[part]
        if isinstance(value, BaseModel):
            value = value.model_dump(mode="python")
        node[leaf] = value
    return ExperimentConfig.model_validate(data)


def load_experiment_config(
    path: str | Path | None = None,
    preset: PresetName | None = None,
    overrides: dict[str, Any] | None = None,
) -> ExperimentConfig:
    """YAML 設定ファイルを読み込む.

    ファイルの内容はプリセットの上にマージされる。プリセットは
    引数 > ファイル内の preset キー > "paper" の順で決まる。

    Args:
        path: YAML ファイルパス（None ならプリセットのみ）
        preset: プリセット名の上書き
        overrides: ドット区切りキーによる追加の上書き

    Returns:
        ExperimentConfig: 検証済み設定
    """
    raw: dict[str, Any] = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as f:
            loaded = yaml.safe_load(f)
        if loaded is not None and not isinstance(loaded, dict):
            raise ValueError(f"Config file {path} must contain a mapping at top level")
        raw = loaded or {}

    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ValueError(f"Unsupported config schema_version {version} (expected {SCHEMA_VERSION})")

    preset_name = preset or raw.get("preset") or "paper"
    if preset_name not in _PRESETS:
        raise ValueError(f"Unknown preset '{preset_name}'. Available: {sorted(_PRESETS)}")

    merged = _deep_merge(_PRESETS[preset_name], raw)
    merged["preset"] = preset_name
    config = ExperimentConfig.model_validate(merged)
    if overrides:
        config = apply_overrides(config, overrides)
    return config


def dump_experiment_config(config: ExperimentConfig, path: str | Path) -> None:
    """解決済み設定を YAML として保存.

    Args:
        config: 保存する設定
        path: 保存先パス
    """
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(config.to_dict(), f, sort_keys=True, allow_unicode=True)
