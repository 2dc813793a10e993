"""胃内容物評価パイプラインの実行スクリプト.

サブコマンド:
- synth-gen: 合成ファントムデータセットを生成
- seg-train: ステージ1（平均教師 + BCP セグメンテーション）を学習
- cls-train: ステージ2（確率マップ誘導 + 二分岐融合分類器）を学習
- evaluate: 患者単位 k-fold 交差検証を実行してレポートを出力
- ablate: 1軸のアブレーションを交差検証で実行
- report: 保存済み run_report.json からレポートを再出力
- predict: テスト分割の症例ごとに推論結果 JSON を出力

終了コード: 0 成功 / 1 入力・設定の検証エラー / 2 学習失敗
"""

import argparse
import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import Any

# プロジェクトルートをパスに追加
sys.path.insert(0, str(Path(__file__).parent.parent))

import pandas as pd  # noqa: E402
import torch  # noqa: E402
import yaml  # noqa: E402
from loguru import logger  # noqa: E402

from config.experiment import ExperimentConfig, dump_experiment_config, load_experiment_config  # noqa: E402
from config.settings import settings  # noqa: E402
from src.classification.trainer import (  # noqa: E402
    evaluate_dbfc,
    guided_inputs,
    load_dbfc,
    predict_study,
    train_dbfc,
)
from src.data.manifest import load_manifest  # noqa: E402
from src.data.splits import patient_level_split  # noqa: E402
from src.errors import TrainingDivergedError  # noqa: E402
from src.experiments.ablation import ABLATION_AXES, run_ablation  # noqa: E402
from src.experiments.cross_validation import RunReport, run_cross_validation  # noqa: E402
from src.experiments.report import FLOAT_FORMAT, emit_report, load_run_report  # noqa: E402
from src.metrics.evaluation import metrics  # noqa: E402
from src.phantom.generator import generate_dataset  # noqa: E402
from src.segmentation.trainer import (  # noqa: E402
    evaluate_segmentation,
    export_probability_map,
    load_segnet,
    predict_probability_map,
    train_segmentation,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_TRAINING = 2


class InterceptHandler(logging.Handler):
    """標準 logging のレコードを loguru に転送する."""

    def emit(self, record: logging.LogRecord) -> None:
        try:
            level: str | int = logger.level(record.levelname).name
        except ValueError:
            level = record.levelno
        frame, depth = logging.currentframe(), 2
        while frame is not None and frame.f_code.co_filename == logging.__file__:
            frame = frame.f_back
            depth += 1
        logger.opt(depth=depth, exception=record.exc_info).log(level, record.getMessage())


def setup_logging(command: str) -> None:
    """ログ設定を初期化."""
    logger.remove()
    logger.add(
        sys.stderr,
        level=settings.LOG_LEVEL,
        format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | "
        "<level>{level: <8}</level> | "
        "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - "
        "<level>{message}</level>",
    )
    # 日付ごとのログファイル
    log_file = Path(settings.LOG_DIR) / f"{command}_{datetime.now().strftime('%Y-%m-%d')}.log"
    logger.add(log_file, level="DEBUG")
    logging.basicConfig(handlers=[InterceptHandler()], level=0, force=True)


def setup_torch() -> None:
    """torch の実行環境を設定."""
    torch.set_default_device(settings.DEVICE)
    torch.set_num_threads(settings.TORCH_NUM_THREADS)
    torch.use_deterministic_algorithms(settings.DETERMINISTIC_ALGORITHMS)


def _parse_assignments(items: list[str]) -> dict[str, Any]:
    overrides = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ValueError(f"--set expects KEY=VALUE, got '{item}'")
        overrides[key.strip()] = yaml.safe_load(raw)
    return overrides


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """設定ファイル・プリセット・コマンドライン上書きから設定を解決."""
    overrides = _parse_assignments(args.set or [])
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = args.out
    return load_experiment_config(args.config, preset=args.preset, overrides=overrides)


def _out_dir(config: ExperimentConfig) -> Path:
    """出力先（設定ファイル > 環境設定 OUTPUT_DIR）を作成して返す."""
    out = Path(config.output_dir or settings.OUTPUT_DIR)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest_path(args: argparse.Namespace) -> Path:
    return Path(args.manifest) if args.manifest else Path(settings.DATA_DIR) / "manifest.jsonl"


# ==================== サブコマンド ====================


def cmd_synth_gen(args: argparse.Namespace, config: ExperimentConfig) -> int:
    out = Path(args.out) if args.out else Path(settings.DATA_DIR)
    _, manifest = generate_dataset(config.phantom, config.n_patients, config.class_priors, config.seed, out_dir=out)
    logger.info(f"Manifest written to {manifest}")
    return EXIT_OK


def cmd_seg_train(args: argparse.Namespace, config: ExperimentConfig) -> int:
    out = _out_dir(config)
    records = load_manifest(_manifest_path(args))
    split = patient_level_split(records, config.split_ratios, config.seed, config.labeled_fraction)
    result = train_segmentation(
        config, split.train_labeled, split.train_unlabeled, split.val, seed=config.seed, out_dir=out / "stage1"
    )
    test_dsc = evaluate_segmentation(result.network, split.test)
    logger.info(f"Stage-1 teacher: val DSC {result.best_val_dsc:.4f}, test DSC {test_dsc:.4f}")

    if args.export_maps:
        for record in split.test:
            for view in ("rld", "sup"):
                pmap = predict_probability_map(result.network, getattr(record, view))
                export_probability_map(pmap, out / "probability_maps" / f"{record.study_id}_{view}.png")
    dump_experiment_config(config, out / "config.yaml")
    return EXIT_OK


def cmd_cls_train(args: argparse.Namespace, config: ExperimentConfig) -> int:
    out = _out_dir(config)
    records = load_manifest(_manifest_path(args))
    split = patient_level_split(records, config.split_ratios, config.seed, config.labeled_fraction)
    teacher = load_segnet(args.teacher) if args.teacher else None
    if teacher is None and config.dbfc.use_pmg:
        raise ValueError("cls-train needs --teacher unless dbfc.use_pmg is false")

    result = train_dbfc(config, split.train, split.val, teacher, seed=config.seed, out_dir=out / "stage2")
    test_in = guided_inputs(split.test, teacher, config.dbfc.gamma, config.dbfc.use_pmg)
    _, cm = evaluate_dbfc(result.model, test_in)
    report = metrics(cm)
    pd.DataFrame([report.to_dict()]).to_csv(out / "test_metrics.csv", index=False, float_format=FLOAT_FORMAT)
    cm.save_csv(out / "test_confusion_matrix.csv")
    logger.info(f"Stage-2 test: acc {report.acc:.4f}, macro F1 {report.f1_macro:.4f}")
    dump_experiment_config(config, out / "config.yaml")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, config: ExperimentConfig) -> int:
    out = _out_dir(config)
    records = load_manifest(_manifest_path(args))
    report = run_cross_validation(config, records, out_dir=out / "folds" if args.keep_checkpoints else None)
    emit_report(report, out)
    dump_experiment_config(config, out / "config.yaml")
    return EXIT_TRAINING if report.failures else EXIT_OK


def cmd_ablate(args: argparse.Namespace, config: ExperimentConfig) -> int:
    out = _out_dir(config)
    records = load_manifest(_manifest_path(args))
    values = [yaml.safe_load(v) for v in args.values]
    result = run_ablation(config, records, args.axis, values)
    report = RunReport(config=config.to_dict(), ablations={args.axis: result.table})
    emit_report(report, out)
    dump_experiment_config(config, out / "config.yaml")
    failed = int(result.table["n_failed"].sum())
    return EXIT_TRAINING if failed else EXIT_OK


def cmd_report(args: argparse.Namespace, config: ExperimentConfig) -> int:
    report = load_run_report(args.run)
    emit_report(report, Path(args.out) if args.out else Path(args.run))
    return EXIT_OK


def cmd_predict(args: argparse.Namespace, config: ExperimentConfig) -> int:
    out = _out_dir(config) / "predictions"
    records = load_manifest(_manifest_path(args))
    split = patient_level_split(records, config.split_ratios, config.seed, config.labeled_fraction)
    model = load_dbfc(args.classifier)
    teacher = load_segnet(args.teacher) if args.teacher else None
    for record in split.test:
        prediction = predict_study(model, teacher, record)
        prediction.save_json(out / f"{record.study_id}.json")
    logger.info(f"Wrote {len(split.test)} predictions to {out}")
    return EXIT_OK


COMMANDS = {
    "synth-gen": cmd_synth_gen,
    "seg-train": cmd_seg_train,
    "cls-train": cmd_cls_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "report": cmd_report,
    "predict": cmd_predict,
}


def build_parser() -> argparse.ArgumentParser:
    """コマンドライン引数のパーサを作る."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="YAML 設定ファイル")
    common.add_argument("--seed", type=int, default=None, help="乱数シード")
    common.add_argument("--preset", choices=["paper", "desk"], default=None, help="プリセット")
    common.add_argument("--out", type=str, default=None, help="出力ディレクトリ")
    common.add_argument(
        "--set", action="append", metavar="KEY=VALUE", help="設定の上書き（例: dbfc.gamma=0.3）"
    )

    parser = argparse.ArgumentParser(description="二段階の胃内容物評価パイプライン")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth-gen", parents=[common], help="合成ファントムを生成")

    p = sub.add_parser("seg-train", parents=[common], help="ステージ1 を学習")
    p.add_argument("--manifest", type=str, default=None, help="マニフェスト（デフォルト: DATA_DIR/manifest.jsonl）")
    p.add_argument("--export-maps", action="store_true", help="テスト症例の確率マップを PNG で保存")

    p = sub.add_parser("cls-train", parents=[common], help="ステージ2 を学習")
    p.add_argument("--manifest", type=str, default=None)
    p.add_argument("--teacher", type=str, default=None, help="ステージ1 教師モデルのチェックポイント")

    p = sub.add_parser("evaluate", parents=[common], help="k-fold 交差検証")
    p.add_argument("--manifest", type=str, default=None)
    p.add_argument("--keep-checkpoints", action="store_true", help="フォールドごとのチェックポイントを保存")

    p = sub.add_parser("ablate", parents=[common], help="アブレーション")
    p.add_argument("--manifest", type=str, default=None)
    p.add_argument("--axis", choices=list(ABLATION_AXES), required=True)
    p.add_argument("--values", nargs="+", required=True, help="軸の値（YAML として解釈）")

    p = sub.add_parser("report", parents=[common], help="保存済み結果からレポートを再出力")
    p.add_argument("--run", type=str, required=True, help="run_report.json またはそのディレクトリ")

    p = sub.add_parser("predict", parents=[common], help="テスト分割の症例を推論")
    p.add_argument("--manifest", type=str, default=None)
    p.add_argument("--classifier", type=str, required=True, help="分類器のチェックポイント")
    p.add_argument("--teacher", type=str, default=None, help="教師モデルのチェックポイント")

    return parser


def main(argv: list[str] | None = None) -> int:
    """エントリーポイント."""
    args = build_parser().parse_args(argv)
    setup_logging(args.command)
    setup_torch()

    try:
        config = resolve_config(args)
        logger.info(f"Running {args.command} (preset={config.preset}, seed={config.seed})")
        return COMMANDS[args.command](args, config)
    except KeyboardInterrupt:
        logger.info("ユーザーにより中断されました")
        return EXIT_OK
    except (TrainingDivergedError, FloatingPointError) as e:
        logger.error(f"学習に失敗しました: {e}")
        return EXIT_TRAINING
    except (ValueError, FileNotFoundError) as e:
        logger.error(f"入力の検証に失敗しました: {e}")
        return EXIT_VALIDATION
    except Exception as e:
        logger.exception(f"実行中にエラーが発生しました: {e}")
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
