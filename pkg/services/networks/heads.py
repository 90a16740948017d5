"""
GMM 参数头 - 四种依赖模式

independent: 全局自由参数 (π, μ, L)，对整个 batch 广播
label:       标签嵌入 → π；μ / L 为全局参数（full_label_conditioning 时也由标签决定）
input:       特征 → 共享 FC → BN → ReLU → 三个独立 FC 头输出 π / μ / L
joint:       π 来自标签嵌入，μ / L 来自特征
"""
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from services.networks.layers import BatchNorm, LabelEmbedding, Linear, Module
from services.tensor.tensor import Tensor, add, as_tensor, mul, parameter, relu, reshape, scale, softplus
from utils.errors import ModeError

CHOL_DIAG_INIT = 0.5
CHOL_DIAG_FLOOR = 1e-6
HEAD_WEIGHT_STD = 1e-2


class DependencyMode(str, Enum):
    INDEPENDENT = "independent"
    LABEL_DEP = "label"
    INPUT_DEP = "input"
    JOINT_DEP = "joint"

    @property
    def needs_labels(self) -> bool:
        return self in (DependencyMode.LABEL_DEP, DependencyMode.JOINT_DEP)

    @property
    def needs_features(self) -> bool:
        return self in (DependencyMode.INPUT_DEP, DependencyMode.JOINT_DEP)

    @property
    def is_conditional(self) -> bool:
        return self is not DependencyMode.INDEPENDENT


@dataclass
class HeadConfig:
    mode: DependencyMode = DependencyMode.INDEPENDENT
    K: int = 7
    latent_dim: int = 8
    hidden_dim: int = 64
    label_emb_dim: int = 16
    label_emb_normalized: bool = True
    full_label_conditioning: bool = False

    def __post_init__(self):
        self.mode = DependencyMode(self.mode)
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")


@dataclass
class HeadTemperatures:
    """退火温度：在激活前作为除数作用于头输出"""
    pi: float = 1.0
    mu: float = 1.0
    sigma: float = 1.0
    shared: float = 1.0


@dataclass
class GmmParams:
    pi_logits: Tensor  # (B, K)
    means: Tensor  # (B, K, D)
    chol_factors: Tensor  # (B, K, D, D)

    @property
    def batch(self) -> int:
        return self.pi_logits.shape[0]

    @property
    def K(self) -> int:
        return self.pi_logits.shape[1]

    @property
    def latent_dim(self) -> int:
        return self.means.shape[2]

    def weights(self) -> np.ndarray:
        """softmax(pi_logits)，numpy (B, K)"""
        logits = self.pi_logits.data
        shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
        return shifted / shifted.sum(axis=1, keepdims=True)

    def take(self, index) -> "GmmParams":
        """按输入下标切片（脱离计算图）"""
        return GmmParams(
            pi_logits=Tensor(self.pi_logits.data[index]),
            means=Tensor(self.means.data[index]),
            chol_factors=Tensor(self.chol_factors.data[index]),
        )


def inverse_softplus(y: float) -> float:
    return float(y + np.log(-np.expm1(-y)))


def chol_from_raw(raw: Tensor, t_sigma: float = 1.0) -> Tensor:
    """
    raw (..., D, D) → 下三角 Cholesky 因子
    严格下三角取 raw / T_σ，对角线取 softplus(raw / T_σ) + 1e-6
    """
    d = raw.shape[-1]
    strict_lower = np.tril(np.ones((d, d)), k=-1)
    eye = np.eye(d)
    scaled = scale(raw, 1.0 / t_sigma)
    diag = mul(add(softplus(scaled), CHOL_DIAG_FLOOR), eye)
    return add(mul(scaled, strict_lower), diag)


def _broadcast_batch(t: Tensor, batch: int) -> Tensor:
    return add(reshape(t, (1, *t.shape)), np.zeros((batch, *t.shape)))


def _chol_bias(K: int, d: int, t_sigma_init: float) -> np.ndarray:
    raw_diag = inverse_softplus(CHOL_DIAG_INIT - CHOL_DIAG_FLOOR) * t_sigma_init
    return np.tile(np.eye(d) * raw_diag, (K, 1, 1))


class MixtureHead(Module):
    """把特征 / 标签映射成 GmmParams"""

    def __init__(
        self,
        cfg: HeadConfig,
        feature_dim: Optional[int] = None,
        num_classes: Optional[int] = None,
        rng: Optional[np.random.Generator] = None,
        t_sigma_init: float = 1.0,
    ):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        K, d = cfg.K, cfg.latent_dim
        mode = cfg.mode
        if mode.needs_features and not feature_dim:
            raise ModeError(f"mode '{mode.value}' needs the classifier feature_dim")
        if mode.needs_labels and not num_classes:
            raise ModeError(f"mode '{mode.value}' needs num_classes")
        chol_bias = _chol_bias(K, d, t_sigma_init)

        self.embedding = None
        self.trunk = None
        label_drives_params = mode is DependencyMode.LABEL_DEP and cfg.full_label_conditioning

        if mode.needs_labels:
            self.embedding = self.add_child(
                "label_emb", LabelEmbedding(num_classes, cfg.label_emb_dim, rng, normalized=cfg.label_emb_normalized)
            )
            self.pi_head = self.add_child("pi_head", Linear(cfg.label_emb_dim, K, rng, weight_std=HEAD_WEIGHT_STD))
        if mode.needs_features:
            self.trunk = self.add_child("trunk", Linear(feature_dim, cfg.hidden_dim, rng))
            self.trunk_bn = self.add_child("trunk_bn", BatchNorm(cfg.hidden_dim))
            if mode is DependencyMode.INPUT_DEP:
                self.pi_head = self.add_child("pi_head", Linear(cfg.hidden_dim, K, rng, weight_std=HEAD_WEIGHT_STD))

        if mode.needs_features or label_drives_params:
            width = cfg.hidden_dim if mode.needs_features else cfg.label_emb_dim
            self.mu_head = self.add_child("mu_head", Linear(width, K * d, rng, weight_std=HEAD_WEIGHT_STD))
            self.chol_head = self.add_child(
                "chol_head",
                Linear(width, K * d * d, rng, weight_std=HEAD_WEIGHT_STD, bias_init=chol_bias.reshape(-1)),
            )
            self.global_params = False
        else:
            self.mu = self.register("mu", parameter(np.zeros((K, d))))
            self.chol_raw = self.register("chol_raw", parameter(chol_bias))
            self.global_params = True

        if mode is DependencyMode.INDEPENDENT:
            self.pi = self.register("pi", parameter(np.zeros(K)))

    def __call__(
        self,
        features=None,
        labels: Optional[np.ndarray] = None,
        temps: Optional[HeadTemperatures] = None,
        batch_size: Optional[int] = None,
    ) -> GmmParams:
        return head_forward(self, features=features, labels=labels, temps=temps, batch_size=batch_size)


def head_forward(
    head: MixtureHead,
    features=None,
    labels: Optional[np.ndarray] = None,
    temps: Optional[HeadTemperatures] = None,
    batch_size: Optional[int] = None,
) -> GmmParams:
    """
    按依赖模式计算 GmmParams

    Args:
        head: MixtureHead（携带 HeadConfig）
        features: (B, feature_dim)，input / joint 模式必需
        labels: (B,) 整数标签，label / joint 模式必需
        temps: 当前退火温度
        batch_size: independent 模式下没有条件输入时的广播 batch 大小

    Returns:
        GmmParams，形状 (B, K) / (B, K, D) / (B, K, D, D)
    """
    cfg = head.cfg
    mode = cfg.mode
    temps = temps or HeadTemperatures()
    K, d = cfg.K, cfg.latent_dim

    if mode.needs_features and features is None:
        raise ModeError(f"mode '{mode.value}' requires input features")
    if mode.needs_labels and labels is None:
        raise ModeError(f"mode '{mode.value}' requires labels")

    if features is not None:
        features = as_tensor(features)
        batch = features.shape[0]
    elif labels is not None:
        batch = len(labels)
    else:
        batch = batch_size or 1
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (batch,):
            raise ModeError(f"mode '{mode.value}': labels shape {labels.shape} does not match batch {batch}")

    hidden = None
    if mode.needs_features:
        hidden = scale(relu(head.trunk_bn(head.trunk(features))), 1.0 / temps.shared)
    embedded = head.embedding(labels) if mode.needs_labels else None

    if mode is DependencyMode.INDEPENDENT:
        pi_logits = _broadcast_batch(head.pi, batch)
    elif mode is DependencyMode.INPUT_DEP:
        pi_logits = head.pi_head(hidden)
    else:
        pi_logits = head.pi_head(embedded)
    pi_logits = scale(pi_logits, 1.0 / temps.pi)

    if head.global_params:
        means = _broadcast_batch(head.mu, batch)
        chol_raw = _broadcast_batch(head.chol_raw, batch)
    else:
        source = hidden if hidden is not None else embedded
        means = reshape(head.mu_head(source), (batch, K, d))
        chol_raw = reshape(head.chol_head(source), (batch, K, d, d))
    means = scale(means, 1.0 / temps.mu)
    return GmmParams(pi_logits=pi_logits, means=means, chol_factors=chol_from_raw(chol_raw, temps.sigma))
