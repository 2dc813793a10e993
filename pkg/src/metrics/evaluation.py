"""評価指標モジュール.

DSC、混同行列、マクロ平均の Precision / Recall / F1、
対応のある t 検定を提供する。
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from scipy import stats
from sklearn.metrics import confusion_matrix

logger = logging.getLogger(__name__)

CLASS_NAMES = ("I", "II", "III")


def _class_names(n_cls: int) -> tuple[str, ...]:
    return CLASS_NAMES if n_cls == len(CLASS_NAMES) else tuple(str(i) for i in range(n_cls))


def dsc(pred: Any, gt: Any) -> float:
    """Dice 類似係数 2|P∩G| / (|P|+|G|)（両方空なら 1）.

    Args:
        pred: 予測マスク（配列または SegmentationMask）
        gt: 正解マスク

    Returns:
        float: DSC
    """
    p = np.asarray(getattr(pred, "pixels", pred))
    g = np.asarray(getattr(gt, "pixels", gt))
    if p.shape != g.shape:
        raise ValueError(f"dsc: shape mismatch {p.shape} vs {g.shape}")
    if not (np.isin(p, (0, 1)).all() and np.isin(g, (0, 1)).all()):
        raise ValueError("dsc expects binary masks")
    p = p.astype(bool)
    g = g.astype(bool)
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, g).sum()) / denom


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """混同行列（行 = 正解、列 = 予測）."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.array(self.counts, dtype=np.int64, copy=True)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"confusion matrix must be square, got shape {counts.shape}")
        if (counts < 0).any():
            raise ValueError("confusion counts must be non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def n_cls(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.counts.shape != other.counts.shape:
            raise ValueError("cannot add confusion matrices of different sizes")
        return ConfusionMatrix(self.counts + other.counts)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def to_dataframe(self) -> pd.DataFrame:
        names = _class_names(self.n_cls)
        return pd.DataFrame(
            self.counts,
            index=pd.Index([f"true_{n}" for n in names], name="ground_truth"),
            columns=[f"pred_{n}" for n in names],
        )

    def save_csv(self, path: str | Path) -> None:
        """CSV として保存."""
        self.to_dataframe().to_csv(path)

    @classmethod
    def load_csv(cls, path: str | Path) -> "ConfusionMatrix":
        """CSV から読み込む."""
        return cls(pd.read_csv(path, index_col=0).to_numpy())


def confusion(preds: Sequence[int], gts: Sequence[int], n_cls: int = 3) -> ConfusionMatrix:
    """予測と正解から混同行列を作る."""
    if len(preds) != len(gts):
        raise ValueError(f"preds ({len(preds)}) and gts ({len(gts)}) differ in length")
    if len(preds) == 0:
        return ConfusionMatrix(np.zeros((n_cls, n_cls), dtype=np.int64))
    labels = list(range(n_cls))
    counts = confusion_matrix(np.asarray(gts, dtype=int), np.asarray(preds, dtype=int), labels=labels)
    return ConfusionMatrix(counts)


@dataclass(frozen=True)
class MetricReport:
    """分類指標.

    undefined_* は分母が 0 で値を 0 と定義したクラスを示す。
    """

    acc: float
    precision_macro: float
    recall_macro: float
    f1_macro: float
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]
    undefined_precision: tuple[bool, ...]
    undefined_recall: tuple[bool, ...]
    undefined_f1: tuple[bool, ...]

    def to_dict(self) -> dict[str, Any]:
        """フラットな辞書形式に変換."""
        out: dict[str, Any] = {
            "acc": self.acc,
            "precision_macro": self.precision_macro,
            "recall_macro": self.recall_macro,
            "f1_macro": self.f1_macro,
        }
        for i, name in enumerate(_class_names(len(self.precision))):
            out[f"precision_{name}"] = self.precision[i]
            out[f"recall_{name}"] = self.recall[i]
            out[f"f1_{name}"] = self.f1[i]
            out[f"precision_{name}_undefined"] = self.undefined_precision[i]
            out[f"recall_{name}_undefined"] = self.undefined_recall[i]
            out[f"f1_{name}_undefined"] = self.undefined_f1[i]
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "MetricReport":
        """to_dict の逆変換."""
        names = [k[len("precision_"):] for k in data if k.startswith("precision_") and not k.endswith(("_undefined", "macro"))]
        return cls(
            acc=float(data["acc"]),
            precision_macro=float(data["precision_macro"]),
            recall_macro=float(data["recall_macro"]),
            f1_macro=float(data["f1_macro"]),
            precision=tuple(float(data[f"precision_{n}"]) for n in names),
            recall=tuple(float(data[f"recall_{n}"]) for n in names),
            f1=tuple(float(data[f"f1_{n}"]) for n in names),
            undefined_precision=tuple(bool(data[f"precision_{n}_undefined"]) for n in names),
            undefined_recall=tuple(bool(data[f"recall_{n}_undefined"]) for n in names),
            undefined_f1=tuple(bool(data[f"f1_{n}_undefined"]) for n in names),
        )


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    undefined = den == 0
    values = np.divide(num, den, out=np.zeros_like(num, dtype=np.float64), where=~undefined)
    return values, undefined


def metrics(cm: ConfusionMatrix) -> MetricReport:
    """混同行列から Acc とマクロ平均の Pre / Rec / F1 を計算.

    Raises:
        ValueError: 混同行列が空の場合
    """
    if cm.total == 0:
        raise ValueError("cannot compute metrics from an empty confusion matrix")
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp

    precision, undef_p = _safe_ratio(tp, tp + fp)
    recall, undef_r = _safe_ratio(tp, tp + fn)
    f1, undef_f = _safe_ratio(2 * precision * recall, precision + recall)

    return MetricReport(
        acc=float(tp.sum() / counts.sum()),
        precision_macro=float(precision.mean()),
        recall_macro=float(recall.mean()),
        f1_macro=float(f1.mean()),
        precision=tuple(float(v) for v in precision),
        recall=tuple(float(v) for v in recall),
        f1=tuple(float(v) for v in f1),
        undefined_precision=tuple(bool(v) for v in undef_p),
        undefined_recall=tuple(bool(v) for v in undef_r),
        undefined_f1=tuple(bool(v) for v in undef_f),
    )


@dataclass(frozen=True)
class TTestResult:
    """対応のある t 検定の結果."""

    t: float
    p: float
    n: int
    mean_diff: float
    degenerate: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "t": self.t,
            "p": self.p,
            "n": self.n,
            "mean_diff": self.mean_diff,
            "degenerate": self.degenerate,
        }


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """対応のある両側 t 検定 (自由度 n−1).

    差の分散が 0 の場合は degenerate とし、平均差 0 なら p=1、
    それ以外は p=0 とする。

    Args:
        a: 手法 A の値
        b: 手法 B の値

    Returns:
        TTestResult: 検定結果
    """
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"paired_t_test needs equal-length 1-D inputs, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ValueError("paired_t_test needs at least 2 pairs")

    diff = x - y
    mean_diff = float(diff.mean())
    if np.all(diff == diff[0]):
        if mean_diff == 0.0:
            return TTestResult(t=0.0, p=1.0, n=int(x.size), mean_diff=0.0, degenerate=True)
        return TTestResult(
            t=float(np.copysign(np.inf, mean_diff)), p=0.0, n=int(x.size), mean_diff=mean_diff, degenerate=True
        )

    result = stats.ttest_rel(x, y)
    return TTestResult(t=float(result.statistic), p=float(result.pvalue), n=int(x.size), mean_diff=mean_diff)
