"""
优化器与学习率调度
Adam（带偏差修正） + 常数 / 余弦（线性预热，可循环）学习率
"""
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from services.tensor.tensor import Tensor
from utils.errors import ShapeError
from utils.logger import logger

DEFAULT_LR = 5e-4


@dataclass
class AdamState:
    """Adam 一阶 / 二阶矩缓冲和步数"""
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)
    skipped_steps: int = 0

    @classmethod
    def for_params(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls(
            step=0,
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
        )


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[Optional[np.ndarray]],
    state: AdamState,
    lr: float,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> bool:
    """
    执行一次 Adam 更新

    Args:
        params: 参数张量（原地替换 data）
        grads: 与 params 对齐的梯度，None 视为 0
        state: 矩缓冲，会被推进一步
        lr: 学习率
        betas: (beta1, beta2)
        eps: 数值稳定项

    Returns:
        是否真正执行了更新（梯度含 NaN/Inf 时跳过并返回 False）
    """
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError("adam_step", [(len(params),), (len(grads),), (len(state.m),)], "params/grads/state length mismatch")
    dense = []
    for p, g, m in zip(params, grads, state.m):
        g = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError("adam_step", [p.shape, g.shape, m.shape])
        dense.append(g)

    if any(not np.all(np.isfinite(g)) for g in dense):
        state.skipped_steps += 1
        logger.warning(f"⚠️ 梯度出现 NaN/Inf，跳过第 {state.step + 1} 步 Adam 更新")
        return False

    beta1, beta2 = betas
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for i, (p, g) in enumerate(zip(params, dense)):
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    return True


class Adam:
    """持有参数与状态的 Adam 优化器"""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = DEFAULT_LR,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState.for_params(self.params)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, lr: Optional[float] = None) -> bool:
        return adam_step(
            self.params,
            [p.grad for p in self.params],
            self.state,
            lr=self.lr if lr is None else lr,
            betas=self.betas,
            eps=self.eps,
        )

    def state_dict(self) -> Dict[str, np.ndarray]:
        """扁平化状态，便于写入权重快照"""
        out: Dict[str, np.ndarray] = {"step": np.array([self.state.step], dtype=np.float64)}
        for i, (m, v) in enumerate(zip(self.state.m, self.state.v)):
            out[f"m.{i:04d}"] = m
            out[f"v.{i:04d}"] = v
        return out

    def load_state_dict(self, tensors: Dict[str, np.ndarray]) -> None:
        self.state.step = int(tensors["step"].reshape(-1)[0])
        for i, p in enumerate(self.params):
            m = np.asarray(tensors[f"m.{i:04d}"], dtype=np.float64)
            v = np.asarray(tensors[f"v.{i:04d}"], dtype=np.float64)
            if m.shape != p.shape or v.shape != p.shape:
                raise ShapeError("Adam.load_state_dict", [p.shape, m.shape, v.shape])
            self.state.m[i] = m.copy()
            self.state.v[i] = v.copy()


@dataclass(frozen=True)
class LearningRateSchedule:
    """
    逐 epoch 学习率

    kind='constant': 始终为 base_lr
    kind='cosine': 前 warmup_epochs 从 lr_min 线性升到 base_lr，之后余弦衰减到 lr_min；
                   cycle_epochs 给定时余弦段按该长度循环重启
    """
    kind: str = "constant"
    base_lr: float = DEFAULT_LR
    total_epochs: int = 50
    warmup_epochs: int = 0
    lr_min: float = 2e-6
    cycle_epochs: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("constant", "cosine"):
            raise ValueError(f"unknown lr schedule '{self.kind}'")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be > 0")

    def value(self, epoch: int) -> float:
        if self.kind == "constant":
            return self.base_lr
        if epoch < self.warmup_epochs:
            return self.lr_min + (self.base_lr - self.lr_min) * (epoch + 1) / self.warmup_epochs
        span = self.cycle_epochs or max(self.total_epochs - self.warmup_epochs, 1)
        position = (epoch - self.warmup_epochs) % span
        progress = position / max(span - 1, 1)
        return self.lr_min + 0.5 * (self.base_lr - self.lr_min) * (1.0 + math.cos(math.pi * progress))
