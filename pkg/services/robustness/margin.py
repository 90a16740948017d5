"""
C&W 风格的 softplus 间隔损失
ℓ = softplus(h_y(x') − max_{j≠y} h_j(x') + κ)，对 batch 与 M 取平均
"""
from dataclasses import dataclass

import numpy as np

from services.tensor.tensor import Tensor, add, as_tensor, reduce_max, reduce_mean, softplus, sub, take_along
from utils.errors import ShapeError

MASK_VALUE = -1e30


@dataclass(frozen=True)
class MarginLossConfig:
    kappa: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.kappa):
            raise ValueError("kappa must be finite")


def _expand_labels(y, rows: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if len(y) == rows:
        return y
    if len(y) == 0 or rows % len(y):
        raise ShapeError("margin_loss", [(rows,), y.shape], "labels are not broadcastable to the logits rows")
    return np.repeat(y, rows // len(y))


def logit_margin(logits, y) -> Tensor:
    """h_y − max_{j≠y} h_j，逐样本；并列时 max 取最小下标"""
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError("margin_loss", [logits.shape], "expected (rows, C)")
    rows, classes = logits.shape
    if classes < 2:
        raise ShapeError("margin_loss", [logits.shape], "needs at least 2 classes")
    y = _expand_labels(y, rows)
    mask = np.zeros((rows, classes))
    mask[np.arange(rows), y] = MASK_VALUE
    runner_up = reduce_max(add(logits, mask), axis=1)
    return sub(take_along(logits, y), runner_up)


def per_sample_margin_loss(logits, y, kappa: float = 1.0) -> Tensor:
    return softplus(add(logit_margin(logits, y), kappa))


def margin_loss(logits, y, kappa: float = 1.0) -> Tensor:
    """
    Args:
        logits: (batch·M, C)
        y: (batch·M,) 或 (batch,)（按每个输入的 M 个样本连续排列展开）
        kappa: 间隔尺度

    Returns:
        标量平均损失
    """
    return reduce_mean(per_sample_margin_loss(logits, y, kappa))
