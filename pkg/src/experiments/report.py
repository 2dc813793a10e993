"""実験結果の書き出しモジュール.

RunReport からフォールドごとの指標 CSV、集計 CSV、混同行列 CSV、
アブレーション表と γ/β/u スイープの折れ線グラフ、誘導画像ギャラリー、
run_report.json を出力する。
"""

import json
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from src.classification.gallery import write_gallery  # noqa: E402
from src.experiments.cross_validation import RunReport  # noqa: E402

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
REPORT_JSON = "run_report.json"
SWEEP_AXES = ("gamma", "beta", "u")
SWEEP_COLUMNS = {"acc": "Acc.", "pre": "Pre.", "rec": "Rec.", "f1": "F1"}


def plot_sweep(table: pd.DataFrame, axis: str, path: str | Path) -> Path:
    """ハイパーパラメータのスイープを折れ線グラフにする."""
    x = pd.to_numeric(table["value"])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for column, label in SWEEP_COLUMNS.items():
        ax.errorbar(x, table[column] * 100.0, yerr=table[f"{column}_std"] * 100.0, marker="o", capsize=3, label=label)
    ax.set_xlabel(axis)
    ax.set_ylabel("%")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def emit_report(report: RunReport, out_dir: str | Path) -> list[Path]:
    """RunReport をファイルに書き出す.

    Args:
        report: 交差検証結果
        out_dir: 出力先ディレクトリ

    Returns:
        list[Path]: 書き出したファイル

    Raises:
        OSError: 出力先に書き込めない場合
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    for fold in report.folds:
        path = out / f"fold_{fold.fold}_metrics.csv"
        pd.DataFrame([fold.metric_row()]).to_csv(path, index=False, float_format=FLOAT_FORMAT)
        written.append(path)

    path = out / "aggregate_metrics.csv"
    report.aggregate().to_csv(path, float_format=FLOAT_FORMAT)
    written.append(path)

    path = out / "confusion_matrix.csv"
    report.summed_confusion().save_csv(path)
    written.append(path)

    for axis, table in report.ablations.items():
        path = out / f"ablation_{axis}.csv"
        table.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        written.append(path)
        if axis in SWEEP_AXES and not table.empty:
            written.append(plot_sweep(table, axis, out / f"ablation_{axis}.png"))

    for name, table in report.comparisons.items():
        path = out / f"comparison_{name}.csv"
        table.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        written.append(path)

    if report.gallery:
        written.extend(write_gallery(report.gallery, out / "gallery"))

    path = out / REPORT_JSON
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, ensure_ascii=False, indent=2)
    written.append(path)

    if report.failures:
        logger.warning(f"Report is partial: {len(report.failures)} fold(s) failed")
    logger.info(f"Wrote {len(written)} report files to {out}")
    return written


def load_run_report(path: str | Path) -> RunReport:
    """run_report.json（またはそれを含むディレクトリ）から RunReport を読み込む."""
    path = Path(path)
    if path.is_dir():
        path = path / REPORT_JSON
    if not path.exists():
        raise FileNotFoundError(f"run report not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return RunReport.from_dict(json.load(f))
