"""ステージ2 学習・推論モジュール.

教師モデルの確率マップで両視野の画像を誘導し、二分岐融合分類器を
Focal 損失で学習する。確率マップは学習前に一度だけ計算する。
"""

import copy
import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import torch
import torch.nn as nn

from config.experiment import DbfcConfig, ExperimentConfig
from src.classification.guidance import apply_guidance
from src.classification.model import DbfcOutput, build_dbfc
from src.data.records import ContentClass, StudyRecord, UltrasoundImage
from src.errors import TrainingDivergedError
from src.metrics.evaluation import ConfusionMatrix, confusion
from src.metrics.losses import focal_loss, inverse_frequency_weights
from src.networks.params import CheckpointError, load_checkpoint, save_checkpoint
from src.segmentation.trainer import load_segnet, predict_probability_maps

logger = logging.getLogger(__name__)

DBFC_KIND = "dbfc"


# ==================== 入力の準備 ====================


@dataclass(frozen=True, eq=False)
class GuidedInputs:
    """誘導済みの分類器入力.

    Attributes:
        x_r: RLD 画像 (M, 1, H, W)
        x_s: SUP 画像 (M, 1, H, W)
        p_r: RLD 確率マップ (M, H, W)
        p_s: SUP 確率マップ (M, H, W)
        labels: 正解クラス (M,)
        study_ids: 検査ID
        patient_ids: 患者ID
    """

    x_r: torch.Tensor
    x_s: torch.Tensor
    p_r: np.ndarray
    p_s: np.ndarray
    labels: torch.Tensor
    study_ids: tuple[str, ...]
    patient_ids: tuple[str, ...]

    def __len__(self) -> int:
        return int(self.labels.shape[0])


def guided_inputs(
    records: Sequence[StudyRecord],
    teacher: nn.Module | None,
    gamma: float,
    use_pmg: bool = True,
) -> GuidedInputs:
    """レコードから誘導済み入力を作る.

    use_pmg が False または teacher が None の場合は p ≡ 1 とする。
    """
    rld = np.stack([r.rld.pixels for r in records])
    sup = np.stack([r.sup.pixels for r in records])
    if use_pmg and teacher is not None:
        p_r = predict_probability_maps(teacher, rld)
        p_s = predict_probability_maps(teacher, sup)
    else:
        p_r = np.ones_like(rld)
        p_s = np.ones_like(sup)
    return GuidedInputs(
        x_r=torch.from_numpy(apply_guidance(rld, p_r, gamma)).float().unsqueeze(1),
        x_s=torch.from_numpy(apply_guidance(sup, p_s, gamma)).float().unsqueeze(1),
        p_r=p_r,
        p_s=p_s,
        labels=torch.tensor([int(r.label) for r in records], dtype=torch.long),
        study_ids=tuple(r.study_id for r in records),
        patient_ids=tuple(r.patient_id for r in records),
    )


# ==================== 損失 ====================


def dbfc_loss(
    y_f: torch.Tensor,
    y_r: torch.Tensor,
    y_s: torch.Tensor,
    y_gt: torch.Tensor,
    u: float = 0.3,
    focusing: float = 2.0,
    class_weights: torch.Tensor | None = None,
    floor: float = 1e-8,
) -> torch.Tensor:
    """Focal(y_f) + u·[Focal(y_r) + Focal(y_s)]."""
    if u < 0:
        raise ValueError(f"u must be >= 0, got {u}")
    fused = focal_loss(y_f, y_gt, focusing, class_weights, floor)
    if u == 0:
        return fused
    aux = focal_loss(y_r, y_gt, focusing, class_weights, floor) + focal_loss(
        y_s, y_gt, focusing, class_weights, floor
    )
    return fused + u * aux


def _loss_for(out: DbfcOutput, labels: torch.Tensor, cfg: DbfcConfig, weights: torch.Tensor | None) -> torch.Tensor:
    if cfg.view_mode != "dual":
        return focal_loss(out.y_f, labels, cfg.focusing, weights, cfg.focal_floor)
    return dbfc_loss(out.y_f, out.y_r, out.y_s, labels, cfg.u, cfg.focusing, weights, cfg.focal_floor)


def resolve_class_weights(cfg: DbfcConfig, labels: Sequence[int]) -> torch.Tensor | None:
    """設定からクラス重みを決定."""
    if cfg.class_weights == "none":
        return None
    if cfg.class_weights == "inverse_frequency":
        return torch.from_numpy(inverse_frequency_weights(labels, cfg.backbone.n_cls)).float()
    return torch.tensor(cfg.class_weights, dtype=torch.float32)


# ==================== 学習 ====================


@dataclass
class DbfcTrainingResult:
    """ステージ2 学習結果."""

    model: nn.Module
    best_val_acc: float
    best_epoch: int
    history: pd.DataFrame
    class_weights: list[float] | None
    checkpoint_path: Path | None = None
    extra: dict[str, Any] = field(default_factory=dict)


@torch.no_grad()
def run_dbfc(model: nn.Module, inputs: GuidedInputs, batch_size: int = 32) -> DbfcOutput:
    """評価モードで全入力を推論."""
    was_training = model.training
    model.eval()
    try:
        outs = [
            model(inputs.x_r[i : i + batch_size], inputs.x_s[i : i + batch_size])
            for i in range(0, len(inputs), batch_size)
        ]
    finally:
        model.train(was_training)
    return DbfcOutput(
        y_f=torch.cat([o.y_f for o in outs]),
        y_r=torch.cat([o.y_r for o in outs]),
        y_s=torch.cat([o.y_s for o in outs]),
    )


def evaluate_dbfc(model: nn.Module, inputs: GuidedInputs) -> tuple[np.ndarray, ConfusionMatrix]:
    """予測クラス（同値は小さい添字）と混同行列."""
    out = run_dbfc(model, inputs)
    preds = np.argmax(out.y_f.double().numpy(), axis=1)
    n_cls = out.y_f.shape[1]
    return preds, confusion(preds.tolist(), inputs.labels.tolist(), n_cls=n_cls)


def _accuracy(model: nn.Module, inputs: GuidedInputs) -> float:
    preds, _ = evaluate_dbfc(model, inputs)
    return float(np.mean(preds == inputs.labels.numpy()))


def train_dbfc(
    config: ExperimentConfig,
    train: Sequence[StudyRecord],
    val: Sequence[StudyRecord],
    teacher: nn.Module | None,
    seed: int = 0,
    out_dir: str | Path | None = None,
) -> DbfcTrainingResult:
    """二分岐融合分類器を学習.

    Args:
        config: 実験設定
        train: 学習レコード
        val: 検証レコード（空なら学習データで選択）
        teacher: ステージ1 の教師モデル（None なら p ≡ 1）
        seed: 乱数シード
        out_dir: チェックポイント・学習履歴の出力先

    Returns:
        DbfcTrainingResult: 最良検証精度のモデル
    """
    if not train:
        raise ValueError("train_dbfc needs at least one training study")
    cfg = config.dbfc
    train_in = guided_inputs(train, teacher, cfg.gamma, cfg.use_pmg)
    val_in = guided_inputs(val, teacher, cfg.gamma, cfg.use_pmg) if val else train_in
    weights = resolve_class_weights(cfg, train_in.labels.tolist())

    model = build_dbfc(cfg, seed=seed)
    optimizer = torch.optim.SGD(model.parameters(), lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng((seed, 21))
    n = len(train_in)

    logger.info(
        f"Training DBFC ({cfg.view_mode}, fusion={cfg.fusion.kind}, backbone={cfg.backbone.backbone_name}) "
        f"on {n} studies for {cfg.epochs} epochs (gamma={cfg.gamma}, u={cfg.u}, pmg={cfg.use_pmg})"
    )
    rows = []
    best_acc, best_epoch = -1.0, 0
    best_state = copy.deepcopy(model.state_dict())
    last_losses: list[float] = []

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        for epoch in range(1, cfg.epochs + 1):
            model.train()
            order = rng.permutation(n)
            epoch_loss, n_seen = 0.0, 0
            for start in range(0, n, cfg.batch_size):
                idx = torch.from_numpy(order[start : start + cfg.batch_size])
                if len(idx) < 2 and n > 1:
                    continue
                out = model(train_in.x_r[idx], train_in.x_s[idx])
                loss = _loss_for(out, train_in.labels[idx], cfg, weights)
                if not torch.isfinite(loss):
                    diagnostics = {"lr": cfg.lr, "last_finite_losses": last_losses[-5:]}
                    logger.error(f"Non-finite DBFC loss at epoch {epoch}: {diagnostics}")
                    raise TrainingDivergedError("dbfc", epoch, diagnostics)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                last_losses.append(float(loss.item()))
                epoch_loss += last_losses[-1] * len(idx)
                n_seen += len(idx)

            val_acc = _accuracy(model, val_in)
            rows.append({"epoch": epoch, "loss": epoch_loss / max(n_seen, 1), "val_acc": val_acc})
            logger.debug(f"[dbfc] epoch {epoch}/{cfg.epochs} loss={rows[-1]['loss']:.4f} val_acc={val_acc:.4f}")
            if val_acc > best_acc:
                best_acc, best_epoch = val_acc, epoch
                best_state = copy.deepcopy(model.state_dict())

    model.load_state_dict(best_state)
    model.eval()
    result = DbfcTrainingResult(
        model=model,
        best_val_acc=best_acc,
        best_epoch=best_epoch,
        history=pd.DataFrame(rows, columns=["epoch", "loss", "val_acc"]),
        class_weights=None if weights is None else [float(w) for w in weights],
    )
    logger.info(f"DBFC training done: best val acc {best_acc:.4f} at epoch {best_epoch}")

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.history.to_csv(out / "dbfc_history.csv", index=False, float_format="%.17g")
        result.checkpoint_path = save_checkpoint(
            model,
            out / "dbfc.ckpt",
            kind=DBFC_KIND,
            config={"dbfc": cfg.model_dump(mode="json"), "image_side": config.phantom.image_side},
            seed=seed,
            iteration=best_epoch,
            extra={"best_val_acc": best_acc, "class_weights": result.class_weights},
        )
    return result


def load_dbfc(path: str | Path) -> nn.Module:
    """チェックポイントから分類器を復元."""
    ckpt = load_checkpoint(path, kind=DBFC_KIND)
    try:
        cfg = DbfcConfig.model_validate(ckpt.config["dbfc"])
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"dbfc checkpoint carries an invalid config echo: {e}") from e
    model = build_dbfc(cfg, seed=ckpt.seed)
    ckpt.restore(model)
    model.eval()
    return model


# ==================== 推論 ====================


@dataclass(frozen=True)
class StudyPrediction:
    """1症例の推論結果."""

    patient_id: str
    study_id: str
    predicted: ContentClass
    y_f: tuple[float, ...]
    y_r: tuple[float, ...]
    y_s: tuple[float, ...]
    gamma: float
    beta: float | None

    def to_dict(self) -> dict[str, Any]:
        """辞書形式に変換."""
        return {
            "patient_id": self.patient_id,
            "study_id": self.study_id,
            "class": self.predicted.name,
            "y_f": list(self.y_f),
            "y_r": list(self.y_r),
            "y_s": list(self.y_s),
            "gamma": self.gamma,
            "beta": self.beta,
        }

    def save_json(self, path: str | Path) -> None:
        """JSON として保存."""
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)


def _beta_of(model: nn.Module) -> float | None:
    cfg: DbfcConfig = model.config  # type: ignore[assignment]
    return cfg.fusion.beta if cfg.view_mode == "dual" else None


def predict_views(
    model: nn.Module,
    teacher: nn.Module | None,
    rld: UltrasoundImage | None,
    sup: UltrasoundImage | None,
    patient_id: str = "",
    study_id: str = "",
) -> StudyPrediction:
    """二視野の画像からクラスを推論.

    Raises:
        ValueError: どちらかの視野が欠けている場合
    """
    if rld is None or sup is None:
        missing = [name for name, img in (("RLD", rld), ("SUP", sup)) if img is None]
        raise ValueError(f"both views are required for prediction; missing {missing}")
    cfg: DbfcConfig = model.config  # type: ignore[assignment]
    images = np.stack([rld.pixels, sup.pixels])
    if cfg.use_pmg and teacher is not None:
        maps = predict_probability_maps(teacher, images)
    else:
        maps = np.ones_like(images)
    guided = apply_guidance(images, maps, cfg.gamma)
    x = torch.from_numpy(guided).float().unsqueeze(1)

    model.eval()
    with torch.no_grad():
        out = model(x[0:1], x[1:2])
    y_f = out.y_f[0].double().numpy()
    return StudyPrediction(
        patient_id=patient_id or rld.patient_id,
        study_id=study_id or rld.study_id,
        predicted=ContentClass(int(np.argmax(y_f))),
        y_f=tuple(float(v) for v in y_f),
        y_r=tuple(float(v) for v in out.y_r[0]),
        y_s=tuple(float(v) for v in out.y_s[0]),
        gamma=cfg.gamma,
        beta=_beta_of(model),
    )


def predict_study(model: nn.Module | str | Path, teacher: nn.Module | str | Path | None, study: Any) -> StudyPrediction:
    """症例レコードのクラスを推論.

    Args:
        model: 分類器またはそのチェックポイント
        teacher: 教師モデルまたはそのチェックポイント（None なら p ≡ 1）
        study: rld / sup 属性を持つ症例

    Returns:
        StudyPrediction: 推論結果
    """
    if not isinstance(model, nn.Module):
        model = load_dbfc(model)
    if teacher is not None and not isinstance(teacher, nn.Module):
        teacher = load_segnet(teacher)
    return predict_views(
        model,
        teacher,
        getattr(study, "rld", None),
        getattr(study, "sup", None),
        patient_id=getattr(study, "patient_id", ""),
        study_id=getattr(study, "study_id", ""),
    )
