"""パラメータベクトルとチェックポイントモジュール.

チェックポイント形式 (リトルエンディアン):
    magic "RSNCKPT" (7 bytes) + format version (uint16)
    + header length (uint32) + JSON header (キー順ソート)
    + テンソル表の順に連結したペイロード
      (浮動小数は float32、整数バッファは int64)
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
import torch.nn as nn
from torch.nn.utils import parameters_to_vector, vector_to_parameters

logger = logging.getLogger(__name__)

MAGIC = b"RSNCKPT"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<7sHI")


class CheckpointError(ValueError):
    """チェックポイントの形式・構成不一致エラー."""


@dataclass(frozen=True)
class ParamVector:
    """パラメータを一列に並べたベクトル.

    順序は named_parameters() の順序で固定される。凍結された教師モデルの
    パラメータも含む。
    """

    values: torch.Tensor
    names: tuple[str, ...]
    shapes: tuple[tuple[int, ...], ...]

    @classmethod
    def from_module(cls, module: nn.Module) -> "ParamVector":
        named = list(module.named_parameters())
        vec = parameters_to_vector([p for _, p in named]).detach().clone()
        return cls(
            values=vec,
            names=tuple(n for n, _ in named),
            shapes=tuple(tuple(p.shape) for _, p in named),
        )

    def __len__(self) -> int:
        return int(self.values.numel())

    def assign_to(self, module: nn.Module) -> None:
        """値をモジュールのパラメータへ書き戻す."""
        named = list(module.named_parameters())
        params = [p for _, p in named]
        names = tuple(n for n, _ in named)
        if names != self.names:
            raise ValueError("parameter layout of module differs from this ParamVector")
        with torch.no_grad():
            vector_to_parameters(self.values.to(params[0].dtype), params)


def count_parameters(module: nn.Module) -> int:
    """学習可能パラメータ数."""
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


@dataclass
class Checkpoint:
    """読み込んだチェックポイント.

    Attributes:
        kind: 種別 ("segnet" / "dbfc")
        config: 構築に使った設定
        seed: 初期化シード
        iteration: 保存時の反復数（またはエポック）
        state: state_dict 相当のテンソル
        extra: 付随情報
    """

    kind: str
    config: dict[str, Any]
    seed: int
    iteration: int
    state: dict[str, torch.Tensor]
    extra: dict[str, Any] = field(default_factory=dict)

    def restore(self, module: nn.Module) -> nn.Module:
        """モジュールへ状態を読み込む（名前・形状が一致しなければ CheckpointError）."""
        expected = module.state_dict()
        if list(expected) != list(self.state):
            missing = sorted(set(expected) - set(self.state))
            unexpected = sorted(set(self.state) - set(expected))
            raise CheckpointError(
                f"{self.kind} checkpoint does not match the network "
                f"(missing={missing[:5]}, unexpected={unexpected[:5]})"
            )
        for name, tensor in self.state.items():
            if tuple(expected[name].shape) != tuple(tensor.shape):
                raise CheckpointError(
                    f"shape mismatch for {name}: checkpoint {tuple(tensor.shape)} "
                    f"vs network {tuple(expected[name].shape)}"
                )
        module.load_state_dict(
            {n: t.to(expected[n].dtype) for n, t in self.state.items()},
        )
        return module


def checkpoint_bytes(
    module: nn.Module,
    kind: str,
    config: dict[str, Any],
    seed: int,
    iteration: int,
    extra: dict[str, Any] | None = None,
) -> bytes:
    """モジュールの状態をチェックポイント形式のバイト列へ変換."""
    table = []
    chunks = []
    for name, tensor in module.state_dict().items():
        arr = tensor.detach().cpu().numpy()
        if np.issubdtype(arr.dtype, np.floating):
            dtype = "float32"
            chunks.append(arr.astype("<f4").tobytes())
        else:
            dtype = "int64"
            chunks.append(arr.astype("<i8").tobytes())
        table.append([name, list(arr.shape), dtype])

    header = {
        "kind": kind,
        "config": config,
        "seed": int(seed),
        "iteration": int(iteration),
        "extra": extra or {},
        "tensors": table,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header_bytes)) + header_bytes + b"".join(chunks)


def save_checkpoint(
    module: nn.Module,
    path: str | Path,
    kind: str,
    config: dict[str, Any],
    seed: int,
    iteration: int,
    extra: dict[str, Any] | None = None,
) -> Path:
    """チェックポイントを保存.

    Args:
        module: 保存するネットワーク
        path: 保存先
        kind: 種別
        config: 設定のエコー (JSON 化可能な辞書)
        seed: 初期化シード
        iteration: 反復数
        extra: 付随情報

    Returns:
        Path: 保存先パス
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(module, kind, config, seed, iteration, extra))
    logger.info(f"Saved {kind} checkpoint to {path} (iteration={iteration})")
    return path


def parse_checkpoint(data: bytes) -> Checkpoint:
    """バイト列からチェックポイントを復元."""
    if len(data) < _PREAMBLE.size:
        raise CheckpointError("checkpoint is truncated")
    magic, version, header_len = _PREAMBLE.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    start = _PREAMBLE.size
    try:
        header = json.loads(data[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint header: {e}") from e

    offset = start + header_len
    state: dict[str, torch.Tensor] = {}
    for name, shape, dtype in header["tensors"]:
        np_dtype = np.dtype("<f4") if dtype == "float32" else np.dtype("<i8")
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * np_dtype.itemsize
        if offset + nbytes > len(data):
            raise CheckpointError(f"payload too short while reading {name}")
        arr = np.frombuffer(data, dtype=np_dtype, count=count, offset=offset).reshape(shape)
        state[name] = torch.from_numpy(arr.copy())
        offset += nbytes
    if offset != len(data):
        raise CheckpointError(f"{len(data) - offset} trailing bytes after payload")

    return Checkpoint(
        kind=header["kind"],
        config=header["config"],
        seed=header["seed"],
        iteration=header["iteration"],
        state=state,
        extra=header.get("extra", {}),
    )


def load_checkpoint(path: str | Path, kind: str | None = None) -> Checkpoint:
    """チェックポイントを読み込む.

    Args:
        path: チェックポイントのパス
        kind: 期待する種別（指定時は不一致で CheckpointError）

    Returns:
        Checkpoint: 読み込んだチェックポイント
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    ckpt = parse_checkpoint(path.read_bytes())
    if kind is not None and ckpt.kind != kind:
        raise CheckpointError(f"expected a {kind} checkpoint, got {ckpt.kind}")
    return ckpt
