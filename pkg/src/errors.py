"""共通の例外・警告クラス."""

from typing import Any


class EmptyRegionWarning(RuntimeWarning):
    """マスク領域が空のため損失を 0 と定義した."""


class ProbabilityFloorWarning(RuntimeWarning):
    """正解クラス確率が下限値でクランプされた."""


class InfeasibleBandError(ValueError):
    """指定面積帯を満たす整数矩形が存在しない."""


class TrainingDivergedError(RuntimeError):
    """損失が非有限値になり学習を中断した.

    Attributes:
        stage: 学習段階 ("pretrain" / "semi_supervised" / "dbfc")
        iteration: 発散した反復（エポック）
        diagnostics: 学習率・直近の有限損失などの診断情報
    """

    def __init__(self, stage: str, iteration: int, diagnostics: dict[str, Any]):
        self.stage = stage
        self.iteration = iteration
        self.diagnostics = diagnostics
        super().__init__(f"{stage} training diverged at iteration {iteration}: {diagnostics}")
