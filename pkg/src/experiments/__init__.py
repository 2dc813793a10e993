"""交差検証・アブレーション・レポート."""

from src.experiments.ablation import ABLATION_AXES, AblationResult, axis_overrides, plan_ablation, run_ablation
from src.experiments.comparison import compare_methods
from src.experiments.cross_validation import (
    METRIC_KEYS,
    FoldFailure,
    FoldReport,
    RunReport,
    run_cross_validation,
    run_fold,
)
from src.experiments.report import emit_report, load_run_report, plot_sweep

__all__ = [
    "ABLATION_AXES",
    "AblationResult",
    "FoldFailure",
    "FoldReport",
    "METRIC_KEYS",
    "RunReport",
    "axis_overrides",
    "compare_methods",
    "emit_report",
    "load_run_report",
    "plan_ablation",
    "plot_sweep",
    "run_ablation",
    "run_cross_validation",
    "run_fold",
]
