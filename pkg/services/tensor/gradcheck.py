"""
有限差分梯度校验（中心差分）
"""
from typing import Callable, Sequence

import numpy as np

from services.tensor.tensor import Tensor


def numerical_gradient(fn: Callable[[], Tensor], tensor: Tensor, h: float = 1e-5) -> np.ndarray:
    """对 tensor 的每个元素做中心差分，fn 必须返回标量"""
    grad = np.zeros_like(tensor.data)
    for index in np.ndindex(*tensor.shape):
        original = tensor.data[index]
        tensor.data[index] = original + h
        plus = fn().item()
        tensor.data[index] = original - h
        minus = fn().item()
        tensor.data[index] = original
        grad[index] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """
    比较解析梯度与中心差分梯度

    Args:
        fn: 无参闭包，基于 inputs 重新构图并返回标量
        inputs: 需要校验的叶子张量（requires_grad=True）
        h: 差分步长

    Returns:
        所有输入中最大的相对误差（按范数）
    """
    for t in inputs:
        t.zero_grad()
    fn().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    worst = 0.0
    for t, a in zip(inputs, analytic):
        worst = max(worst, relative_error(a, numerical_gradient(fn, t, h)))
    return worst
