"""患者単位 k-fold 交差検証ドライバ.

各フォールドでステージ1（教師モデル）とステージ2（分類器）を学習し、
テスト患者で評価して mean±std と混同行列の和を集計する。
フォールド単位の失敗は記録して残りのフォールドを続ける。
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import torch.nn as nn

from config.experiment import ExperimentConfig
from src.classification.gallery import GalleryItem, gallery_items
from src.classification.trainer import evaluate_dbfc, guided_inputs, train_dbfc
from src.data.records import DatasetSplit, StudyRecord, patient_ids
from src.data.splits import kfold_patient_partition
from src.errors import TrainingDivergedError
from src.metrics.evaluation import ConfusionMatrix, MetricReport, metrics
from src.segmentation.trainer import SegTrainingResult, evaluate_segmentation, train_segmentation

logger = logging.getLogger(__name__)

METRIC_KEYS = ("acc", "precision_macro", "recall_macro", "f1_macro")

# フォールド失敗として記録する例外
FOLD_ERRORS = (TrainingDivergedError, FloatingPointError, ValueError, RuntimeError)


@dataclass(frozen=True)
class FoldReport:
    """1フォールドの評価結果."""

    fold: int
    metrics: MetricReport
    confusion: ConfusionMatrix
    test_patients: tuple[str, ...]
    seg_val_dsc: float = float("nan")
    seg_test_dsc: float = float("nan")
    best_val_acc: float = float("nan")

    def metric_row(self) -> dict[str, Any]:
        """CSV 1行分の値."""
        return {
            "fold": self.fold,
            **self.metrics.to_dict(),
            "seg_val_dsc": self.seg_val_dsc,
            "seg_test_dsc": self.seg_test_dsc,
            "best_val_acc": self.best_val_acc,
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "fold": self.fold,
            "metrics": self.metrics.to_dict(),
            "confusion": self.confusion.counts.tolist(),
            "test_patients": list(self.test_patients),
            "seg_val_dsc": self.seg_val_dsc,
            "seg_test_dsc": self.seg_test_dsc,
            "best_val_acc": self.best_val_acc,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "FoldReport":
        return cls(
            fold=int(data["fold"]),
            metrics=MetricReport.from_dict(data["metrics"]),
            confusion=ConfusionMatrix(np.asarray(data["confusion"], dtype=np.int64)),
            test_patients=tuple(data["test_patients"]),
            seg_val_dsc=float(data["seg_val_dsc"]),
            seg_test_dsc=float(data["seg_test_dsc"]),
            best_val_acc=float(data["best_val_acc"]),
        )


@dataclass(frozen=True)
class FoldFailure:
    """失敗したフォールドの記録."""

    fold: int
    stage: str
    error_type: str
    message: str

    def to_dict(self) -> dict[str, Any]:
        return {"fold": self.fold, "stage": self.stage, "error_type": self.error_type, "message": self.message}


@dataclass
class RunReport:
    """交差検証の実行結果.

    Attributes:
        config: 解決済み設定
        folds: 成功したフォールドの結果（フォールド番号順）
        failures: 失敗したフォールドの記録
        ablations: 軸名 → アブレーション表
        comparisons: 比較名 → 検定結果表
        gallery: 誘導画像ギャラリー（JSON には保存しない）
    """

    config: dict[str, Any]
    folds: list[FoldReport] = field(default_factory=list)
    failures: list[FoldFailure] = field(default_factory=list)
    ablations: dict[str, pd.DataFrame] = field(default_factory=dict)
    comparisons: dict[str, pd.DataFrame] = field(default_factory=dict)
    gallery: list[GalleryItem] = field(default_factory=list)

    @property
    def is_partial(self) -> bool:
        return bool(self.failures)

    def fold_values(self, metric: str) -> list[float]:
        """フォールドごとの指標値."""
        if metric in ("seg_val_dsc", "seg_test_dsc", "best_val_acc"):
            return [getattr(f, metric) for f in self.folds]
        return [float(f.metrics.to_dict()[metric]) for f in self.folds]

    def fold_frame(self) -> pd.DataFrame:
        """フォールド × 指標の表."""
        return pd.DataFrame([f.metric_row() for f in self.folds])

    def aggregate(self) -> pd.DataFrame:
        """mean / std（母標準偏差）の表."""
        keys = [*METRIC_KEYS, "seg_test_dsc"]
        rows = {}
        for key in keys:
            values = np.asarray(self.fold_values(key), dtype=np.float64)
            if values.size == 0:
                rows[key] = {"mean": float("nan"), "std": float("nan"), "n_folds": 0}
            else:
                rows[key] = {"mean": float(np.mean(values)), "std": float(np.std(values)), "n_folds": int(values.size)}
        frame = pd.DataFrame.from_dict(rows, orient="index")
        frame.index.name = "metric"
        return frame

    def summed_confusion(self) -> ConfusionMatrix:
        """全フォールドの混同行列の和."""
        if not self.folds:
            n_cls = int(self.config.get("dbfc", {}).get("backbone", {}).get("n_cls", 3))
            return ConfusionMatrix(np.zeros((n_cls, n_cls), dtype=np.int64))
        total = self.folds[0].confusion
        for f in self.folds[1:]:
            total = total + f.confusion
        return total

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config,
            "folds": [f.to_dict() for f in self.folds],
            "failures": [f.to_dict() for f in self.failures],
            "ablations": {k: v.to_dict(orient="records") for k, v in self.ablations.items()},
            "comparisons": {k: v.to_dict(orient="records") for k, v in self.comparisons.items()},
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunReport":
        return cls(
            config=data["config"],
            folds=[FoldReport.from_dict(f) for f in data.get("folds", [])],
            failures=[FoldFailure(**f) for f in data.get("failures", [])],
            ablations={k: pd.DataFrame(v) for k, v in data.get("ablations", {}).items()},
            comparisons={k: pd.DataFrame(v) for k, v in data.get("comparisons", {}).items()},
        )


def _fold_seed(seed: int, fold: int) -> int:
    return seed * 1000 + fold


def run_fold(
    config: ExperimentConfig,
    split: DatasetSplit,
    fold: int,
    out_dir: Path | None = None,
    stage1: SegTrainingResult | None = None,
    gallery_limit: int = 0,
) -> tuple[FoldReport, SegTrainingResult | None, list[GalleryItem]]:
    """1フォールドを学習・評価.

    use_pmg が False の場合、ステージ1 は学習せず p ≡ 1 とする。

    Args:
        config: 実験設定
        split: フォールドの分割
        fold: フォールド番号
        out_dir: フォールドの出力先
        stage1: 学習済みのステージ1 結果（再利用する場合）
        gallery_limit: ギャラリーに含める症例数

    Returns:
        (FoldReport, ステージ1 結果, ギャラリー項目)
    """
    seed = _fold_seed(config.seed, fold)
    teacher: nn.Module | None = None
    seg_val = seg_test = float("nan")

    if config.dbfc.use_pmg:
        if stage1 is None:
            stage1 = train_segmentation(
                config,
                split.train_labeled,
                split.train_unlabeled,
                split.val,
                seed=seed,
                out_dir=None if out_dir is None else out_dir / "stage1",
            )
        teacher = stage1.network
        seg_val = stage1.best_val_dsc
        if split.test and all(r.has_masks for r in split.test):
            seg_test = evaluate_segmentation(teacher, split.test)

    stage2 = train_dbfc(
        config,
        split.train,
        split.val,
        teacher,
        seed=seed,
        out_dir=None if out_dir is None else out_dir / "stage2",
    )
    test_in = guided_inputs(split.test, teacher, config.dbfc.gamma, config.dbfc.use_pmg)
    _, cm = evaluate_dbfc(stage2.model, test_in)
    report = FoldReport(
        fold=fold,
        metrics=metrics(cm),
        confusion=cm,
        test_patients=tuple(sorted(patient_ids(split.test))),
        seg_val_dsc=seg_val,
        seg_test_dsc=seg_test,
        best_val_acc=stage2.best_val_acc,
    )
    items: list[GalleryItem] = []
    if gallery_limit > 0:
        items = gallery_items(
            np.stack([r.rld.pixels for r in split.test]),
            np.stack([r.sup.pixels for r in split.test]),
            test_in,
            limit=gallery_limit,
        )
    logger.info(
        f"Fold {fold}: acc={report.metrics.acc:.4f} f1={report.metrics.f1_macro:.4f} "
        f"seg_test_dsc={seg_test:.4f}"
    )
    return report, stage1, items


def run_cross_validation(
    config: ExperimentConfig,
    records: Sequence[StudyRecord],
    out_dir: str | Path | None = None,
    stage1_cache: dict[int, SegTrainingResult] | None = None,
    gallery_limit: int = 2,
) -> RunReport:
    """k-fold 交差検証を実行.

    Args:
        config: 実験設定
        records: データセット全体
        out_dir: フォールドごとの出力先（チェックポイント・学習履歴）
        stage1_cache: フォールド番号 → ステージ1 結果。ステージ1 の設定が
            同じ実行間で教師モデルを共有するために使う
        gallery_limit: 最初の成功フォールドからギャラリーに含める症例数

    Returns:
        RunReport: フォールド結果と失敗記録
    """
    splits = kfold_patient_partition(
        records,
        k=config.k_folds,
        seed=config.seed,
        ratios=config.split_ratios,
        labeled_fraction=config.labeled_fraction,
    )
    report = RunReport(config=config.to_dict())
    root = Path(out_dir) if out_dir is not None else None
    logger.info(f"Cross-validation: {config.k_folds} folds over {len(records)} studies (seed={config.seed})")

    for i, split in enumerate(splits):
        fold_dir = None if root is None else root / f"fold_{i}"
        cached = None if stage1_cache is None else stage1_cache.get(i)
        try:
            fold_report, stage1, items = run_fold(
                config,
                split,
                i,
                out_dir=fold_dir,
                stage1=cached,
                gallery_limit=0 if report.gallery else gallery_limit,
            )
        except FOLD_ERRORS as e:
            stage = e.stage if isinstance(e, TrainingDivergedError) else "fold"
            logger.warning(f"Fold {i} failed ({type(e).__name__}): {e}")
            report.failures.append(FoldFailure(i, stage, type(e).__name__, str(e)))
            continue
        if stage1_cache is not None and stage1 is not None:
            stage1_cache[i] = stage1
        report.folds.append(fold_report)
        report.gallery.extend(items)

    agg = report.aggregate()
    logger.info(
        f"Cross-validation done: {len(report.folds)}/{config.k_folds} folds, "
        f"acc {agg.loc['acc', 'mean']:.4f}±{agg.loc['acc', 'std']:.4f}"
    )
    return report
