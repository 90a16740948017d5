"""
Gumbel-softmax 松弛采样
z̃_k = softmax((log π_k + g_k) / τ)，g_k ~ Gumbel(0, 1)
"""
from typing import Optional, Tuple

import numpy as np

from services.tensor.tensor import Tensor, add, as_tensor, log_softmax, reshape, scale, softmax

GUMBEL_U_FLOOR = 1e-12


def gumbel_noise(shape: Tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    u = np.maximum(rng.random(shape), GUMBEL_U_FLOOR)
    return -np.log(-np.log(u))


def gumbel_softmax_sample(
    pi_logits: Tensor,
    tau: float,
    rng: Optional[np.random.Generator] = None,
    noise: Optional[np.ndarray] = None,
) -> Tensor:
    """
    对 pi_logits (B, K) 做 Gumbel-softmax 采样

    Args:
        pi_logits: 未归一化的混合权重 logits
        tau: 温度（> 0）
        rng: 噪声来源（noise 为空时使用）
        noise: 预先抽好的 Gumbel 噪声，形状 (B, K) 或 (B, M, K)，用于共同随机数

    Returns:
        与 noise 同形状的松弛 one-hot 向量，可对 pi_logits 求导
    """
    if tau <= 0:
        raise ValueError("tau must be > 0")
    pi_logits = as_tensor(pi_logits)
    if noise is None:
        if rng is None:
            raise ValueError("either rng or noise must be given")
        noise = gumbel_noise(pi_logits.shape, rng)
    log_pi = log_softmax(pi_logits, axis=-1)
    if noise.ndim == pi_logits.ndim + 1:
        log_pi = reshape(log_pi, (pi_logits.shape[0], 1, pi_logits.shape[1]))
    return softmax(scale(add(log_pi, noise), 1.0 / tau), axis=-1)


def gumbel_argmax(pi_logits: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Gumbel-max：argmax(log π + g)，等价于从 Categorical(π) 精确采样"""
    shifted = pi_logits - pi_logits.max(axis=-1, keepdims=True)
    log_pi = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    if noise.ndim == pi_logits.ndim + 1:
        log_pi = log_pi[:, None, :]
    return np.argmax(log_pi + noise, axis=-1)
