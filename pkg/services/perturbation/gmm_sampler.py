"""
GMM 采样

训练：Gumbel-softmax 松弛 ε = Σ_k z̃_k μ_k + Σ_k z̃_k L_k ξ_k（对 π / μ / L 全程可导）
评估：精确采样 z ~ Categorical(π)，ε = μ_z + L_z ξ_z（无松弛偏差）
"""
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from services.networks.heads import GmmParams
from services.perturbation.gumbel import gumbel_noise, gumbel_softmax_sample
from services.tensor.tensor import Tensor, add, matmul, mul, reduce_sum, reshape

RngLike = Union[np.random.Generator, Sequence[np.random.Generator]]


@dataclass
class SamplerNoise:
    """一次采样调用的全部随机量，预先抽取以便松弛 / 精确采样共享同一组随机数"""
    gumbel: np.ndarray  # (B, M, K)
    uniforms: np.ndarray  # (B, M)
    xi: np.ndarray  # (B, M, K, D)

    @property
    def batch(self) -> int:
        return self.gumbel.shape[0]

    @property
    def samples(self) -> int:
        return self.gumbel.shape[1]

    @classmethod
    def draw(cls, rng: RngLike, batch: int, M: int, K: int, D: int) -> "SamplerNoise":
        """rng 为单个 Generator 时整批共用；为列表时每个输入使用自己的子流"""
        if M < 1:
            raise ValueError("M must be >= 1")
        if isinstance(rng, np.random.Generator):
            return cls(
                gumbel=gumbel_noise((batch, M, K), rng),
                uniforms=rng.random((batch, M)),
                xi=rng.standard_normal((batch, M, K, D)),
            )
        streams = list(rng)
        if len(streams) != batch:
            raise ValueError(f"expected {batch} substreams, got {len(streams)}")
        parts = [cls.draw(stream, 1, M, K, D) for stream in streams]
        return cls(
            gumbel=np.concatenate([p.gumbel for p in parts], axis=0),
            uniforms=np.concatenate([p.uniforms for p in parts], axis=0),
            xi=np.concatenate([p.xi for p in parts], axis=0),
        )

    def slice_samples(self, start: int, stop: int) -> "SamplerNoise":
        return SamplerNoise(self.gumbel[:, start:stop], self.uniforms[:, start:stop], self.xi[:, start:stop])


@dataclass
class PerturbationBatch:
    latent: Tensor  # (B, M, D)
    relaxed_weights: Tensor  # (B, M, K)，精确采样时为 one-hot
    component_draws: np.ndarray  # ξ: (B, M, K, D)
    components: np.ndarray  # (B, M) argmax / 抽中的分量
    delta: Optional[np.ndarray] = None  # (B, M, d) 上采样 + 预算后的输入空间扰动


def _resolve_noise(params: GmmParams, M: int, rng: Optional[RngLike], noise: Optional[SamplerNoise]) -> SamplerNoise:
    if noise is not None:
        expected = (params.batch, params.K)
        if (noise.batch, noise.gumbel.shape[2]) != expected or noise.xi.shape[3] != params.latent_dim:
            raise ValueError("sampler noise does not match GMM parameter shapes")
        return noise
    if rng is None:
        raise ValueError("either rng or noise must be given")
    return SamplerNoise.draw(rng, params.batch, M, params.K, params.latent_dim)


def sample_perturbations(
    params: GmmParams,
    M: int,
    tau: float,
    rng: Optional[RngLike] = None,
    noise: Optional[SamplerNoise] = None,
) -> PerturbationBatch:
    """松弛采样，返回的 latent 可对 params 反向传播"""
    if M < 1:
        raise ValueError("M must be >= 1")
    noise = _resolve_noise(params, M, rng, noise)
    B, K, D = params.batch, params.K, params.latent_dim
    M = noise.samples

    weights = gumbel_softmax_sample(params.pi_logits, tau, noise=noise.gumbel)  # (B, M, K)
    mean_part = matmul(weights, params.means)  # (B, M, D)
    chol = reshape(params.chol_factors, (B, 1, K, D, D))
    scaled_xi = reshape(matmul(chol, noise.xi[..., None]), (B, M, K, D))  # L_k ξ_k
    noise_part = reduce_sum(mul(reshape(weights, (B, M, K, 1)), scaled_xi), axis=2)
    latent = add(mean_part, noise_part)
    return PerturbationBatch(
        latent=latent,
        relaxed_weights=weights,
        component_draws=noise.xi,
        components=np.argmax(weights.data, axis=-1),
    )


def choose_components(weights: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """
    逆 CDF 抽取分量：取满足 cdf_k >= u 的最小 k，u 恰好落在累计质量边界上时取较小的下标

    u 先截断到最小正数，零质量分量不会被抽中；舍入使 u 超过总质量时取最后一个正质量分量
    """
    cdf = np.cumsum(weights, axis=-1)
    K = weights.shape[-1]
    u = np.maximum(uniforms, np.finfo(np.float64).tiny)
    chosen = np.stack([np.searchsorted(cdf[b], u[b], side="left") for b in range(weights.shape[0])])
    last_positive = K - 1 - np.argmax(weights[:, ::-1] > 0, axis=-1)
    return np.minimum(chosen, last_positive[:, None])


def sample_exact(
    params: GmmParams,
    M: int,
    rng: Optional[RngLike] = None,
    noise: Optional[SamplerNoise] = None,
) -> PerturbationBatch:
    """精确采样（评估用），结果不挂在计算图上"""
    if M < 1:
        raise ValueError("M must be >= 1")
    noise = _resolve_noise(params, M, rng, noise)
    B, K = params.batch, params.K
    M = noise.samples

    components = choose_components(params.weights(), noise.uniforms)  # (B, M)
    rows = np.arange(B)[:, None]
    cols = np.arange(M)[None, :]
    means = params.means.data[rows, components]  # (B, M, D)
    chol = params.chol_factors.data[rows, components]  # (B, M, D, D)
    xi = noise.xi[rows, cols, components]  # (B, M, D)
    latent = means + np.einsum("bmij,bmj->bmi", chol, xi)
    return PerturbationBatch(
        latent=Tensor(latent),
        relaxed_weights=Tensor(np.eye(K)[components]),
        component_draws=noise.xi,
        components=components,
    )
