"""設定モジュール."""

from config.experiment import (
    ClassifierConfig,
    DbfcConfig,
    ExperimentConfig,
    FusionSpec,
    PhantomParams,
    SegNetConfig,
    SegTrainingConfig,
    apply_overrides,
    dump_experiment_config,
    load_experiment_config,
    preset_config,
)
from config.settings import Settings, settings

__all__ = [
    "ClassifierConfig",
    "DbfcConfig",
    "ExperimentConfig",
    "FusionSpec",
    "PhantomParams",
    "SegNetConfig",
    "SegTrainingConfig",
    "Settings",
    "apply_overrides",
    "dump_experiment_config",
    "load_experiment_config",
    "preset_config",
    "settings",
]
