"""
扰动生成器 - 特征 / 标签 → GMM 头 → 采样 → 上采样 → γ·tanh
"""
from typing import Optional, Tuple

import numpy as np

from services.networks.classifier import MLPClassifier, extract_features
from services.networks.heads import GmmParams, HeadConfig, HeadTemperatures, MixtureHead
from services.networks.layers import Module
from services.perturbation.anneal import AnnealSchedule
from services.perturbation.gmm_sampler import (
    PerturbationBatch,
    RngLike,
    SamplerNoise,
    sample_exact,
    sample_perturbations,
)
from services.perturbation.upsample import Upsampler, UpsamplerConfig, apply_budget, upsample
from services.tensor.tensor import Tensor, no_grad, reshape


class PerturbationGenerator(Module):
    """
    可学习的扰动分布 ν_φ

    head.* / upsampler.* 两组参数；eval_temps 为评估时使用的头温度（训练结束时的值）
    """

    def __init__(
        self,
        head_cfg: HeadConfig,
        upsampler_cfg: UpsamplerConfig,
        feature_dim: Optional[int] = None,
        num_classes: Optional[int] = None,
        rng: Optional[np.random.Generator] = None,
        anneal: Optional[AnnealSchedule] = None,
    ):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        anneal = anneal or AnnealSchedule()
        self.head_cfg = head_cfg
        self.upsampler_cfg = upsampler_cfg
        self.feature_dim = feature_dim
        self.num_classes = num_classes
        self.head = self.add_child(
            "head", MixtureHead(head_cfg, feature_dim, num_classes, rng, t_sigma_init=anneal.t_sigma[0])
        )
        self.upsampler = self.add_child("upsampler", Upsampler(upsampler_cfg, head_cfg.latent_dim, rng))
        self.eval_temps = anneal.final()

    @property
    def mode(self):
        return self.head_cfg.mode

    @property
    def gamma(self) -> float:
        return float(self.upsampler_cfg.gamma)

    @property
    def input_dim(self) -> int:
        return self.upsampler.output_dim

    def gmm_params(
        self,
        clf: MLPClassifier,
        x: np.ndarray,
        y: np.ndarray,
        temps: Optional[HeadTemperatures] = None,
    ) -> GmmParams:
        features = extract_features(clf, x) if self.mode.needs_features else None
        labels = np.asarray(y, dtype=np.int64) if self.mode.needs_labels else None
        return self.head(features=features, labels=labels, temps=temps, batch_size=len(x))

    def to_input_space(self, latent: Tensor) -> Tensor:
        """(B, M, D) → 上采样 + 预算 → (B, M, d)"""
        B, M, D = latent.shape
        flat = reshape(latent, (B * M, D))
        delta = apply_budget(upsample(flat, self.upsampler), self.gamma)
        return reshape(delta, (B, M, self.input_dim))

    def sample_relaxed(
        self,
        params: GmmParams,
        M: int,
        tau: float,
        rng: Optional[RngLike] = None,
        noise: Optional[SamplerNoise] = None,
    ) -> Tuple[PerturbationBatch, Tensor]:
        """训练用松弛采样，返回 (batch, 可导的输入空间扰动)"""
        batch = sample_perturbations(params, M, tau, rng=rng, noise=noise)
        return batch, self.to_input_space(batch.latent)

    def sample_exact(
        self,
        params: GmmParams,
        M: int,
        rng: Optional[RngLike] = None,
        noise: Optional[SamplerNoise] = None,
    ) -> PerturbationBatch:
        """评估用精确采样，delta 为 numpy (B, M, d)"""
        with no_grad():
            batch = sample_exact(params, M, rng=rng, noise=noise)
            batch.delta = self.to_input_space(batch.latent).data
        return batch

    def mixture_weights(self, clf: MLPClassifier, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.gmm_params(clf, x, y, temps=self.eval_temps).weights()
