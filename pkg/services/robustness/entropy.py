"""
混合权重熵比 ER(π) = H(π) / log K，接近 0 表示单一分量主导（模式坍缩）
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass
class MixtureStats:
    entropy_ratio: float
    pi_max: float
    pi_min: float
    pi_std: float


def entropy_ratio(pi, K: Optional[int] = None) -> float:
    pi = np.asarray(pi, dtype=np.float64).reshape(-1)
    K = len(pi) if K is None else K
    if K < 2:
        raise ValueError("entropy ratio is undefined for K < 2")
    if len(pi) != K:
        raise ValueError(f"pi has {len(pi)} entries, expected {K}")
    if np.any(pi < -1e-12) or abs(pi.sum() - 1.0) > 1e-6:
        raise ValueError("pi must lie in the probability simplex")
    pi = np.clip(pi, 0.0, 1.0)
    positive = pi > 0
    entropy = -np.sum(pi[positive] * np.log(pi[positive]))
    return float(np.clip(entropy / np.log(K), 0.0, 1.0))


def mixture_statistics(weights: np.ndarray) -> MixtureStats:
    """
    weights (B, K)：ER 取逐行平均；max / min / std 基于平均混合向量
    K = 1 时只有一个分量，ER 记为 0
    """
    weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    K = weights.shape[1]
    mean_pi = weights.mean(axis=0)
    ratio = 0.0 if K < 2 else float(np.mean([entropy_ratio(row) for row in weights]))
    return MixtureStats(
        entropy_ratio=ratio,
        pi_max=float(mean_pi.max()),
        pi_min=float(mean_pi.min()),
        pi_std=float(mean_pi.std()),
    )
