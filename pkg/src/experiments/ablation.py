"""アブレーション実行モジュール.

1つの軸の値ごとに交差検証を実行し、Acc / Pre / Rec / F1 の mean±std を
表にまとめる。全ての値は学習開始前に検証する。
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from pydantic import BaseModel

from config.experiment import ExperimentConfig, FusionSpec, apply_overrides
from src.classification.fusion import added_parameters
from src.classification.model import build_dbfc
from src.data.records import StudyRecord
from src.experiments.cross_validation import RunReport, run_cross_validation
from src.networks.backbones import build_classifier, check_backbone_name
from src.networks.params import count_parameters
from src.segmentation.trainer import SegTrainingResult

logger = logging.getLogger(__name__)

ABLATION_AXES = ("pmg", "dbfc", "gamma", "beta", "u", "fusion", "backbone", "seg_setting")

# 列名 → RunReport の指標名
TABLE_METRICS = {"acc": "acc", "pre": "precision_macro", "rec": "recall_macro", "f1": "f1_macro"}


def _require_bool(axis: str, value: Any) -> bool:
    if not isinstance(value, (bool, np.bool_)):
        raise ValueError(f"{axis} ablation values must be booleans, got {value!r}")
    return bool(value)


def axis_overrides(axis: str, value: Any) -> list[dict[str, Any]]:
    """軸の1つの値に対応する設定上書きのリスト.

    dbfc=False は RLD のみ・SUP のみの2つの単一視野実行になる。
    """
    if axis == "pmg":
        return [{"dbfc.use_pmg": _require_bool(axis, value)}]
    if axis == "dbfc":
        if _require_bool(axis, value):
            return [{"dbfc.view_mode": "dual"}]
        return [{"dbfc.view_mode": "rld"}, {"dbfc.view_mode": "sup"}]
    if axis == "gamma":
        return [{"dbfc.gamma": float(value)}]
    if axis == "beta":
        return [{"dbfc.fusion": {"kind": "weighted_logits", "beta": float(value)}}]
    if axis == "u":
        return [{"dbfc.u": float(value)}]
    if axis == "fusion":
        return [{"dbfc.fusion": {"kind": str(value)}}]
    if axis == "backbone":
        check_backbone_name(str(value))
        return [{"dbfc.backbone.backbone_name": str(value)}]
    if axis == "seg_setting":
        return [{"seg_setting": str(value)}]
    raise ValueError(f"Unknown ablation axis '{axis}'. Available: {list(ABLATION_AXES)}")


def plan_ablation(
    config: ExperimentConfig, axis: str, values: Sequence[Any]
) -> list[tuple[Any, list[ExperimentConfig]]]:
    """全ての値を検証し、値ごとの設定リストを返す.

    Raises:
        ValueError: 軸名または値が不正な場合（pydantic の ValidationError を含む）
    """
    if not values:
        raise ValueError(f"ablation on '{axis}' needs at least one value")
    if axis == "beta" and config.dbfc.view_mode != "dual":
        raise ValueError("beta ablation needs the dual-branch classifier")
    plan = []
    for value in values:
        configs = [apply_overrides(config, o) for o in axis_overrides(axis, value)]
        plan.append((value, configs))
    return plan


def _delta_params(config: ExperimentConfig, spec: FusionSpec) -> int:
    feature_dim = build_classifier(config.dbfc.backbone).feature_dim
    return added_parameters(spec, feature_dim, config.dbfc.backbone.n_cls)


def _mean_over_runs(reports: Sequence[RunReport], metric: str) -> tuple[float, float]:
    means = []
    stds = []
    for r in reports:
        values = np.asarray(r.fold_values(metric), dtype=np.float64)
        means.append(float(np.mean(values)) if values.size else float("nan"))
        stds.append(float(np.std(values)) if values.size else float("nan"))
    return float(np.mean(means)), float(np.mean(stds))


@dataclass
class AblationResult:
    """アブレーション結果."""

    axis: str
    table: pd.DataFrame
    runs: dict[str, list[RunReport]] = field(default_factory=dict)


def _value_label(value: Any) -> str:
    if isinstance(value, BaseModel):
        return str(value.model_dump(mode="json"))
    return str(value)


def run_ablation(
    config: ExperimentConfig,
    records: Sequence[StudyRecord],
    axis: str,
    values: Sequence[Any],
    out_dir: str | Path | None = None,
) -> AblationResult:
    """軸の値ごとに交差検証を実行して表を作る.

    seg_setting 以外の軸ではステージ1 の教師モデルをフォールドごとに共有する。

    Args:
        config: 基準となる実験設定
        records: データセット
        axis: アブレーション軸
        values: 軸の値
        out_dir: 実行ごとの出力先

    Returns:
        AblationResult: 表（value, acc, pre, rec, f1, *_std, 必要に応じて delta_params / params / seg_dsc）
    """
    plan = plan_ablation(config, axis, values)
    logger.info(f"Ablation on '{axis}': {len(plan)} values {[_value_label(v) for v, _ in plan]}")
    shared_stage1: dict[int, SegTrainingResult] | None = {} if axis != "seg_setting" else None

    rows = []
    runs: dict[str, list[RunReport]] = {}
    for value, configs in plan:
        label = _value_label(value)
        reports = []
        for cfg in configs:
            run_dir = None
            if out_dir is not None:
                run_dir = Path(out_dir) / f"{axis}_{label}" / cfg.dbfc.view_mode
            reports.append(run_cross_validation(cfg, records, out_dir=run_dir, stage1_cache=shared_stage1, gallery_limit=0))
        runs[label] = reports

        row: dict[str, Any] = {"value": label}
        for column, metric in TABLE_METRICS.items():
            row[column], row[f"{column}_std"] = _mean_over_runs(reports, metric)
        row["n_failed"] = int(sum(len(r.failures) for r in reports))
        if axis == "fusion":
            row["delta_params"] = _delta_params(configs[0], configs[0].dbfc.fusion)
        if axis == "backbone":
            row["params"] = count_parameters(build_dbfc(configs[0].dbfc))
        if axis == "seg_setting":
            row["seg_dsc"], row["seg_dsc_std"] = _mean_over_runs(reports, "seg_test_dsc")
        rows.append(row)
        logger.info(f"Ablation {axis}={label}: acc={row['acc']:.4f}±{row['acc_std']:.4f}")

    return AblationResult(axis=axis, table=pd.DataFrame(rows), runs=runs)

