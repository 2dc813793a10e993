"""誘導画像ギャラリー.

元画像 / 確率マップ / 誘導後画像の3枚組 PNG を症例・視野ごとに書き出す。
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from src.classification.trainer import GuidedInputs  # noqa: E402
from src.data.records import View  # noqa: E402

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class GalleryItem:
    """ギャラリーの1項目."""

    study_id: str
    view: View
    raw: np.ndarray
    probability: np.ndarray
    guided: np.ndarray


def gallery_items(
    raw_rld: np.ndarray,
    raw_sup: np.ndarray,
    inputs: GuidedInputs,
    limit: int = 4,
) -> list[GalleryItem]:
    """誘導済み入力から先頭 limit 症例の項目を作る.

    Args:
        raw_rld: 誘導前の RLD 画像 (M, H, W)
        raw_sup: 誘導前の SUP 画像 (M, H, W)
        inputs: guided_inputs の結果
        limit: 症例数の上限
    """
    items = []
    for i in range(min(limit, len(inputs))):
        sid = inputs.study_ids[i]
        items.append(GalleryItem(sid, View.RLD, raw_rld[i], inputs.p_r[i], inputs.x_r[i, 0].numpy()))
        items.append(GalleryItem(sid, View.SUP, raw_sup[i], inputs.p_s[i], inputs.x_s[i, 0].numpy()))
    return items


def write_gallery(items: Sequence[GalleryItem], out_dir: str | Path) -> list[Path]:
    """3枚組 PNG を書き出す.

    Returns:
        list[Path]: 書き出したファイル
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for item in items:
        fig, axes = plt.subplots(1, 3, figsize=(9, 3))
        panels = (("Image", item.raw), ("Probability map", item.probability), ("Guided", item.guided))
        for ax, (title, data) in zip(axes, panels, strict=True):
            ax.imshow(data, cmap="gray", vmin=0.0, vmax=1.0)
            ax.set_title(title)
            ax.axis("off")
        fig.suptitle(f"{item.study_id} ({item.view.value})")
        fig.tight_layout()
        path = out / f"{item.study_id}_{item.view.value.lower()}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        paths.append(path)
    logger.info(f"Wrote {len(paths)} gallery triptychs to {out}")
    return paths
