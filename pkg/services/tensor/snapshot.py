"""
权重快照格式（JSON）

{
  "format_version": 1,
  "kind": "classifier" | "generator_checkpoint" | ...,
  "meta": {...},
  "tensors": {"name": {"shape": [...], "values": [... 行优先 ...]}}
}

键排序 + Python repr 浮点数，保证 save→load→save 字节一致
"""
import json
import os
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from utils.errors import CheckpointError

FORMAT_VERSION = 1


def encode_snapshot(tensors: Dict[str, np.ndarray], kind: str, meta: Optional[Dict[str, Any]] = None) -> str:
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "meta": meta or {},
        "tensors": {
            name: {
                "shape": list(np.shape(value)),
                "values": np.asarray(value, dtype=np.float64).reshape(-1).tolist(),
            }
            for name, value in tensors.items()
        },
    }
    return json.dumps(payload, sort_keys=True, allow_nan=False)


def decode_snapshot(text: str, expected_kind: Optional[str] = None) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"corrupt snapshot: {e}") from e
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError("corrupt snapshot: missing format_version header")
    if payload["format_version"] != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported snapshot format_version {payload['format_version']} (expected {FORMAT_VERSION})"
        )
    if expected_kind is not None and payload.get("kind") != expected_kind:
        raise CheckpointError(f"snapshot kind '{payload.get('kind')}' does not match expected '{expected_kind}'")
    tensors: Dict[str, np.ndarray] = {}
    try:
        for name, entry in payload["tensors"].items():
            shape = tuple(int(s) for s in entry["shape"])
            values = np.asarray(entry["values"], dtype=np.float64)
            if values.size != int(np.prod(shape, dtype=np.int64)):
                raise CheckpointError(f"corrupt snapshot: tensor '{name}' has {values.size} values for shape {shape}")
            tensors[name] = values.reshape(shape)
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"corrupt snapshot: {e}") from e
    return tensors, payload.get("meta", {})


def save_snapshot(
    path: Union[str, Path],
    tensors: Dict[str, np.ndarray],
    kind: str,
    meta: Optional[Dict[str, Any]] = None,
) -> Path:
    """写快照（先写临时文件再原子替换）"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(encode_snapshot(tensors, kind, meta), encoding="utf-8")
    os.replace(tmp, path)
    return path


def load_snapshot(
    path: Union[str, Path], expected_kind: Optional[str] = None
) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"snapshot not found: {path}")
    return decode_snapshot(path.read_text(encoding="utf-8"), expected_kind=expected_kind)
