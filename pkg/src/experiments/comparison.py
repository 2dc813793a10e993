"""手法間の有意差検定."""

import logging
from collections.abc import Sequence

import pandas as pd

from src.experiments.cross_validation import METRIC_KEYS, RunReport
from src.metrics.evaluation import paired_t_test

logger = logging.getLogger(__name__)


def _fold_keys(report: RunReport) -> list[tuple[int, tuple[str, ...]]]:
    return [(f.fold, f.test_patients) for f in report.folds]


def compare_methods(
    report_a: RunReport,
    report_b: RunReport,
    metric_keys: Sequence[str] = METRIC_KEYS,
) -> pd.DataFrame:
    """フォールドごとの指標で対応のある t 検定を行う.

    Args:
        report_a: 手法 A の交差検証結果
        report_b: 手法 B の交差検証結果
        metric_keys: 検定する指標

    Returns:
        pd.DataFrame: metric, mean_a, mean_b, mean_diff, t, p, degenerate,
            significant_05, significant_01 の表

    Raises:
        ValueError: 両者のフォールド（番号とテスト患者）が一致しない場合
    """
    keys_a, keys_b = _fold_keys(report_a), _fold_keys(report_b)
    if keys_a != keys_b:
        raise ValueError(
            f"reports cover different folds: {[k for k, _ in keys_a]} vs {[k for k, _ in keys_b]} "
            "(fold indices or test patients differ)"
        )

    rows = []
    for key in metric_keys:
        a = report_a.fold_values(key)
        b = report_b.fold_values(key)
        result = paired_t_test(a, b)
        rows.append(
            {
                "metric": key,
                "mean_a": float(sum(a) / len(a)),
                "mean_b": float(sum(b) / len(b)),
                "mean_diff": result.mean_diff,
                "t": result.t,
                "p": result.p,
                "degenerate": result.degenerate,
                "significant_05": result.p < 0.05,
                "significant_01": result.p < 0.01,
            }
        )
    table = pd.DataFrame(rows)
    logger.info(f"Compared {len(keys_a)} folds: {dict(zip(table['metric'], table['p'].round(4)))}")
    return table
