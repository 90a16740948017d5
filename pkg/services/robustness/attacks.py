"""
对抗鲁棒性基线：L∞ PGD（交叉熵）与 C&W（softplus 间隔损失）

均为随机起点 + 符号梯度 + 投影回 γ 球；只要任一迭代点（含干净输入）被误分类，该样本即视为不鲁棒
"""
from typing import Callable, Optional

import numpy as np

from services.data.datasets import LabeledDataset
from services.networks.classifier import MLPClassifier, cross_entropy
from services.perturbation.rng import StreamPurpose, input_streams
from services.robustness.margin import margin_loss
from services.tensor.tensor import Tensor

DEFAULT_CHUNK = 512
STEP_FACTOR = 2.5

LossFn = Callable[[Tensor, np.ndarray], Tensor]


def _robust_mask(
    clf: MLPClassifier,
    x: np.ndarray,
    y: np.ndarray,
    ids: np.ndarray,
    gamma: float,
    steps: int,
    step_size: float,
    loss_fn: LossFn,
    ascend: bool,
    seed: int,
    random_start: bool,
) -> np.ndarray:
    robust = clf.predict(x) == y
    if gamma <= 0:
        return robust
    if random_start:
        streams = input_streams(seed, StreamPurpose.PGD, 0, ids)
        delta = np.stack([stream.uniform(-gamma, gamma, size=x.shape[1]) for stream in streams])
    else:
        delta = np.zeros_like(x)
    direction = 1.0 if ascend else -1.0
    for _ in range(steps):
        robust &= clf.predict(x + delta) == y
        x_adv = Tensor(x + delta, requires_grad=True)
        loss_fn(clf(x_adv), y).backward()
        grad = np.zeros_like(x) if x_adv.grad is None else x_adv.grad
        delta = np.clip(delta + direction * step_size * np.sign(grad), -gamma, gamma)
    robust &= clf.predict(x + delta) == y
    return robust


def _attack(
    clf: MLPClassifier,
    dataset: LabeledDataset,
    gamma: float,
    steps: int,
    step_size: Optional[float],
    loss_fn: LossFn,
    ascend: bool,
    seed: int,
    random_start: bool,
    chunk: int,
) -> float:
    dataset.require_nonempty()
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    step_size = STEP_FACTOR * gamma / steps if step_size is None else step_size
    robust = 0
    for start in range(0, len(dataset), chunk):
        sl = slice(start, start + chunk)
        robust += int(_robust_mask(
            clf, dataset.x[sl], dataset.y[sl], dataset.ids[sl], gamma, steps, step_size,
            loss_fn, ascend, seed, random_start,
        ).sum())
    return robust / len(dataset)


def ar_pgd(
    clf: MLPClassifier,
    dataset: LabeledDataset,
    gamma: float,
    steps: int = 20,
    step_size: Optional[float] = None,
    seed: int = 0,
    random_start: bool = True,
    chunk: int = DEFAULT_CHUNK,
) -> float:
    """
    PGD-k 攻击后仍被正确分类的比例

    Args:
        gamma: L∞ 半径（0 时返回干净准确率）
        steps: 迭代步数
        step_size: 单步步长，默认 2.5·γ/steps
        seed: 随机起点的子流种子
    """
    return _attack(clf, dataset, gamma, steps, step_size, cross_entropy, True, seed, random_start, chunk)


def ar_cw(
    clf: MLPClassifier,
    dataset: LabeledDataset,
    gamma: float,
    steps: int = 20,
    step_size: Optional[float] = None,
    kappa: float = 1.0,
    seed: int = 0,
    random_start: bool = True,
    chunk: int = DEFAULT_CHUNK,
) -> float:
    def loss_fn(logits: Tensor, y: np.ndarray) -> Tensor:
        return margin_loss(logits, y, kappa)

    return _attack(clf, dataset, gamma, steps, step_size, loss_fn, False, seed, random_start, chunk)
