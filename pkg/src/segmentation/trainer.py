"""ステージ1 学習モジュール.

ラベル付き部分集合での教師あり事前学習と、平均教師 + BCP による
半教師あり学習を行い、胃前庭部の確率マップを出力する教師モデルを得る。
RLD / SUP の両視野の画像を1つの学習集合として扱う。
"""

import copy
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
from PIL import Image

from config.experiment import ExperimentConfig, SegNetConfig
from src.data.records import ProbabilityMap, StudyRecord, UltrasoundImage, View
from src.errors import TrainingDivergedError
from src.metrics.evaluation import dsc
from src.metrics.losses import seg_base_loss
from src.networks.params import CheckpointError, load_checkpoint, save_checkpoint
from src.networks.segnet import UNet, build_segnet
from src.segmentation.bcp import bcp_compose, bcp_loss_terms, sample_patch_mask
from src.segmentation.mean_teacher import ema_update_module, make_teacher, teacher_pseudo_label

logger = logging.getLogger(__name__)

SEGNET_KIND = "segnet"
LOSS_COLUMNS = ["iteration", "L_s", "L_c", "lr"]


@dataclass
class SegTrainingResult:
    """ステージ1 学習結果.

    Attributes:
        network: 最良検証 DSC の重みを読み込んだネットワーク
        best_val_dsc: 最良検証 DSC
        best_iteration: 最良時の反復数
        final_loss: 最終反復の損失
        loss_log: 反復ごとの損失表
        checkpoint_path: 保存したチェックポイント
    """

    network: UNet
    best_val_dsc: float
    best_iteration: int
    final_loss: float
    loss_log: pd.DataFrame
    checkpoint_path: Path | None = None
    history: list[dict[str, Any]] = field(default_factory=list)


def poly_lr(base_lr: float, iteration: int, max_iterations: int, power: float = 0.9) -> float:
    """多項式減衰学習率."""
    return base_lr * (1.0 - iteration / max_iterations) ** power


def pooled_views(records: Sequence[StudyRecord], require_masks: bool = True) -> tuple[torch.Tensor, torch.Tensor | None]:
    """両視野の画像 (M, 1, H, W) とマスク (M, H, W) を積み上げる."""
    images = []
    masks = []
    for r in records:
        for view in View:
            images.append(r.image(view).pixels)
            mask = r.mask(view)
            if mask is None:
                if require_masks:
                    raise ValueError(f"study {r.study_id} has no {view.value} mask")
            else:
                masks.append(mask.pixels)
    x = torch.from_numpy(np.stack(images)).float().unsqueeze(1)
    y = torch.from_numpy(np.stack(masks)).long() if masks and len(masks) == len(images) else None
    return x, y


def _check_finite(loss: torch.Tensor, stage: str, iteration: int, lr: float, history: list[float]) -> None:
    if not torch.isfinite(loss):
        diagnostics = {"lr": lr, "last_finite_losses": history[-5:]}
        logger.error(f"Non-finite {stage} loss at iteration {iteration}: {diagnostics}")
        raise TrainingDivergedError(stage, iteration, diagnostics)


@torch.no_grad()
def segment(net: nn.Module, x: torch.Tensor, batch_size: int = 16) -> torch.Tensor:
    """前景確率 (M, H, W) を返す."""
    was_training = net.training
    net.eval()
    try:
        out = [torch.softmax(net(x[i : i + batch_size]), dim=1)[:, 1] for i in range(0, len(x), batch_size)]
    finally:
        net.train(was_training)
    return torch.cat(out) if out else torch.empty(0, *x.shape[-2:])


def evaluate_segmentation(net: nn.Module, records: Sequence[StudyRecord]) -> float:
    """両視野の平均 DSC (argmax 二値化)."""
    if not records:
        return float("nan")
    x, y = pooled_views(records)
    pred = (segment(net, x) > 0.5).numpy().astype(np.uint8)
    gt = y.numpy().astype(np.uint8)
    return float(np.mean([dsc(p, g) for p, g in zip(pred, gt, strict=True)]))


def _loss_frame(rows: list[tuple[int, float, float, float]]) -> pd.DataFrame:
    return pd.DataFrame(rows, columns=LOSS_COLUMNS)


def _segnet_config_echo(config: SegNetConfig, image_side: int) -> dict[str, Any]:
    return {"segnet": config.model_dump(mode="json"), "image_side": image_side}


def pretrain_supervised(
    config: ExperimentConfig,
    train_labeled: Sequence[StudyRecord],
    val: Sequence[StudyRecord],
    seed: int = 0,
    iterations: int | None = None,
    out_dir: str | Path | None = None,
) -> SegTrainingResult:
    """ラベル付きデータのみで U-Net を学習.

    Args:
        config: 実験設定
        train_labeled: ラベル付き学習レコード
        val: 検証レコード（空なら学習データで選択）
        seed: 乱数シード
        iterations: 反復数（省略時は事前学習予算）
        out_dir: チェックポイント・損失ログの出力先

    Returns:
        SegTrainingResult: 学習結果

    Raises:
        ValueError: ラベル付きデータが空の場合
        TrainingDivergedError: 損失が非有限になった場合
    """
    if not train_labeled:
        raise ValueError("supervised pretraining needs at least one labeled study")
    train_cfg = config.seg_training
    n_iter = iterations if iterations is not None else train_cfg.pretrain_iterations
    side = config.phantom.image_side

    net = build_segnet(config.segnet, seed=seed, image_side=side)
    x, y = pooled_views(train_labeled)
    assert y is not None
    selection_set = val if val else train_labeled
    optimizer = torch.optim.SGD(
        net.parameters(), lr=train_cfg.lr, momentum=train_cfg.momentum, weight_decay=train_cfg.weight_decay
    )
    rng = np.random.default_rng((seed, 11))
    batch = train_cfg.labeled_batch_size

    logger.info(f"Supervised pretraining: {len(x)} images, {n_iter} iterations (seed={seed})")
    rows: list[tuple[int, float, float, float]] = []
    losses: list[float] = []
    best_dsc, best_iter = -1.0, 0
    best_state = copy.deepcopy(net.state_dict())

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net.train()
        for it in range(n_iter):
            lr = poly_lr(train_cfg.lr, it, n_iter, train_cfg.lr_power)
            for group in optimizer.param_groups:
                group["lr"] = lr
            idx = torch.from_numpy(rng.choice(len(x), size=batch, replace=len(x) < batch))
            loss = seg_base_loss(net(x[idx]), y[idx])
            _check_finite(loss, "pretrain", it, lr, losses)

            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(float(loss.item()))
            rows.append((it + 1, losses[-1], 0.0, lr))

            if (it + 1) % train_cfg.log_interval == 0:
                logger.debug(f"[pretrain] iter {it + 1}/{n_iter} loss={losses[-1]:.4f} lr={lr:.5f}")
            if (it + 1) % train_cfg.eval_interval == 0 or it + 1 == n_iter:
                score = evaluate_segmentation(net, selection_set)
                if score > best_dsc:
                    best_dsc, best_iter = score, it + 1
                    best_state = copy.deepcopy(net.state_dict())
                net.train()

    net.load_state_dict(best_state)
    result = SegTrainingResult(
        network=net,
        best_val_dsc=best_dsc,
        best_iteration=best_iter,
        final_loss=losses[-1],
        loss_log=_loss_frame(rows),
    )
    logger.info(f"Pretraining done: best val DSC {best_dsc:.4f} at iteration {best_iter}")
    if out_dir is not None:
        _persist(result, config, seed, Path(out_dir), "pretrain")
    return result


def train_semi_supervised(
    config: ExperimentConfig,
    train_labeled: Sequence[StudyRecord],
    train_unlabeled: Sequence[StudyRecord],
    val: Sequence[StudyRecord],
    pretrained: nn.Module,
    seed: int = 0,
    out_dir: str | Path | None = None,
) -> SegTrainingResult:
    """平均教師 + BCP による半教師あり学習.

    各反復でラベル付き・ラベルなしのバッチをランダムに対応付け、
    組ごとにパッチマスクを1枚サンプルして2枚の合成画像を作る。
    疑似ラベルは教師モデル（eval モード）が元のラベルなし画像から作る。

    Args:
        config: 実験設定
        train_labeled: ラベル付き学習レコード
        train_unlabeled: ラベルなし学習レコード
        val: 検証レコード
        pretrained: 事前学習済みネットワーク（生徒・教師の初期値）
        seed: 乱数シード
        out_dir: チェックポイント・損失ログの出力先

    Returns:
        SegTrainingResult: 最良検証 DSC の教師モデル
    """
    if not train_labeled:
        raise ValueError("semi-supervised training needs labeled studies")
    if not train_unlabeled:
        raise ValueError("semi-supervised training needs unlabeled studies")
    train_cfg = config.seg_training
    n_iter = train_cfg.semi_supervised_iterations

    student = copy.deepcopy(pretrained)
    teacher = make_teacher(pretrained)
    x_lab, y_lab = pooled_views(train_labeled)
    assert y_lab is not None
    x_unl, _ = pooled_views(train_unlabeled, require_masks=False)
    selection_set = val if val else train_labeled
    side = x_lab.shape[-1]

    optimizer = torch.optim.SGD(
        student.parameters(), lr=train_cfg.lr, momentum=train_cfg.momentum, weight_decay=train_cfg.weight_decay
    )
    rng = np.random.default_rng((seed, 12))
    batch = train_cfg.labeled_batch_size

    logger.info(
        f"Mean-teacher BCP training: {len(x_lab)} labeled / {len(x_unl)} unlabeled images, "
        f"{n_iter} iterations (alpha={train_cfg.ema_alpha}, seed={seed})"
    )
    rows: list[tuple[int, float, float, float]] = []
    losses: list[float] = []
    best_dsc = evaluate_segmentation(teacher, selection_set)
    best_iter = 0
    best_state = copy.deepcopy(teacher.state_dict())

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        student.train()
        for it in range(n_iter):
            lr = poly_lr(train_cfg.lr, it, n_iter, train_cfg.lr_power)
            for group in optimizer.param_groups:
                group["lr"] = lr

            idx_l = rng.choice(len(x_lab), size=batch, replace=len(x_lab) < batch)
            idx_u = rng.choice(len(x_unl), size=batch, replace=len(x_unl) < batch)
            idx_u = idx_u[rng.permutation(batch)]
            xl, yl = x_lab[torch.from_numpy(idx_l)], y_lab[torch.from_numpy(idx_l)]
            xu = x_unl[torch.from_numpy(idx_u)]
            m = torch.stack(
                [sample_patch_mask(side, side, train_cfg.patch_area_band, rng).to_tensor() for _ in range(batch)]
            )

            yu = teacher_pseudo_label(teacher, xu)
            x_ul, x_lu = bcp_compose(xu, xl, m)
            terms = bcp_loss_terms(student, x_ul, x_lu, yl, yu, m)
            loss = terms.total
            _check_finite(loss, "semi_supervised", it, lr, losses)

            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            ema_update_module(teacher, student, train_cfg.ema_alpha, iteration=it)

            losses.append(float(loss.item()))
            rows.append((it + 1, float(terms.l_s.item()), float(terms.l_c.item()), lr))
            if (it + 1) % train_cfg.log_interval == 0:
                logger.debug(
                    f"[bcp] iter {it + 1}/{n_iter} L_s={rows[-1][1]:.4f} L_c={rows[-1][2]:.4f} lr={lr:.5f}"
                )
            if (it + 1) % train_cfg.eval_interval == 0 or it + 1 == n_iter:
                score = evaluate_segmentation(teacher, selection_set)
                if score > best_dsc:
                    best_dsc, best_iter = score, it + 1
                    best_state = copy.deepcopy(teacher.state_dict())

    teacher.load_state_dict(best_state)
    result = SegTrainingResult(
        network=teacher,
        best_val_dsc=best_dsc,
        best_iteration=best_iter,
        final_loss=losses[-1],
        loss_log=_loss_frame(rows),
    )
    logger.info(f"BCP training done: best teacher val DSC {best_dsc:.4f} at iteration {best_iter}")
    if out_dir is not None:
        _persist(result, config, seed, Path(out_dir), "teacher")
    return result


def train_segmentation(
    config: ExperimentConfig,
    train_labeled: Sequence[StudyRecord],
    train_unlabeled: Sequence[StudyRecord],
    val: Sequence[StudyRecord],
    seed: int = 0,
    out_dir: str | Path | None = None,
) -> SegTrainingResult:
    """seg_setting に従ってステージ1を学習.

    - bcp: 事前学習 (予算の pretrain_fraction) → 平均教師 BCP
    - supervised_labeled: ラベル付き部分集合のみで全予算の教師あり学習
    - supervised_full: 全学習データをラベル付きとして教師あり学習
    """
    setting = config.seg_setting
    total = config.seg_training.iterations
    if setting == "supervised_labeled":
        return pretrain_supervised(config, train_labeled, val, seed, iterations=total, out_dir=out_dir)
    if setting == "supervised_full":
        full = list(train_labeled) + list(train_unlabeled)
        return pretrain_supervised(config, full, val, seed, iterations=total, out_dir=out_dir)

    pre = pretrain_supervised(config, train_labeled, val, seed, out_dir=out_dir)
    if not train_unlabeled:
        logger.warning("No unlabeled studies; returning the supervised model")
        return pre
    return train_semi_supervised(
        config, train_labeled, train_unlabeled, val, pre.network, seed=seed, out_dir=out_dir
    )


def _persist(result: SegTrainingResult, config: ExperimentConfig, seed: int, out_dir: Path, tag: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    result.loss_log.to_csv(out_dir / f"{tag}_loss.csv", index=False, float_format="%.17g")
    result.checkpoint_path = save_checkpoint(
        result.network,
        out_dir / f"{tag}.ckpt",
        kind=SEGNET_KIND,
        config=_segnet_config_echo(config.segnet, config.phantom.image_side),
        seed=seed,
        iteration=result.best_iteration,
        extra={"best_val_dsc": result.best_val_dsc},
    )


def load_segnet(path: str | Path) -> UNet:
    """チェックポイントから U-Net を復元."""
    ckpt = load_checkpoint(path, kind=SEGNET_KIND)
    try:
        seg_cfg = SegNetConfig.model_validate(ckpt.config["segnet"])
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"segnet checkpoint carries an invalid config echo: {e}") from e
    net = build_segnet(seg_cfg, seed=ckpt.seed)
    ckpt.restore(net)
    net.eval()
    return net


# ==================== 確率マップ ====================


def predict_probability_maps(net: nn.Module, images: np.ndarray | torch.Tensor) -> np.ndarray:
    """(M, H, W) の画像群に対する前景確率 (M, H, W)."""
    x = torch.as_tensor(np.asarray(images), dtype=torch.float32)
    if x.dim() == 3:
        x = x.unsqueeze(1)
    return segment(net, x).double().clamp(0.0, 1.0).numpy()


def predict_probability_map(net_or_path: nn.Module | str | Path, image: UltrasoundImage | np.ndarray) -> ProbabilityMap:
    """1枚の画像の前景確率マップ.

    Args:
        net_or_path: 教師ネットワークまたはそのチェックポイント
        image: 入力画像

    Returns:
        ProbabilityMap: 前景チャネルの softmax
    """
    net = net_or_path if isinstance(net_or_path, nn.Module) else load_segnet(net_or_path)
    pixels = image.pixels if isinstance(image, UltrasoundImage) else np.asarray(image)
    return ProbabilityMap(predict_probability_maps(net, pixels[None])[0])


def export_probability_map(pmap: ProbabilityMap, path: str | Path) -> None:
    """16bit PNG (値 = round(p·65535)) として保存."""
    levels = np.rint(pmap.foreground * 65535.0).astype(np.uint16)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(levels).save(path)


def load_probability_map(path: str | Path) -> ProbabilityMap:
    """16bit PNG から確率マップを読み込む."""
    with Image.open(path) as img:
        levels = np.asarray(img, dtype=np.float64)
    return ProbabilityMap(levels / 65535.0)
