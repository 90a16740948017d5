"""
Monte-Carlo 鲁棒性估计

NPPR: 在学到的扰动分布下（精确采样）保持正确的概率
PR:   在固定基线分布（均匀球 / 截断高斯）下保持正确的概率
所有估计按输入分块，每个输入使用 (seed, purpose, epoch, input_id) 子流，结果与分块大小无关
"""
import math

import numpy as np

from services.data.datasets import LabeledDataset
from services.networks.classifier import MLPClassifier
from services.perturbation.generator import PerturbationGenerator
from services.perturbation.gmm_sampler import SamplerNoise
from services.perturbation.rng import StreamPurpose, input_streams
from services.robustness.types import LawKind, PerturbationLaw
from services.tensor.tensor import no_grad
from utils.errors import ShapeError

MC_SIGMAS = 3.0
DEFAULT_CHUNK = 256


def mc_half_width(p: float, n: int, sigmas: float = MC_SIGMAS) -> float:
    """二项分布 3σ 半宽：3·sqrt(p(1−p)/n)"""
    if n <= 0:
        return float("inf")
    p = min(max(float(p), 0.0), 1.0)
    return sigmas * math.sqrt(p * (1.0 - p) / n)


def combined_half_width(p1: float, n1: int, p2: float, n2: int, sigmas: float = MC_SIGMAS) -> float:
    """两个独立估计之差的半宽"""
    var = 0.0
    for p, n in ((p1, n1), (p2, n2)):
        if n > 0:
            p = min(max(float(p), 0.0), 1.0)
            var += p * (1.0 - p) / n
    return sigmas * math.sqrt(var)


def perturbed_correctness(clf: MLPClassifier, x: np.ndarray, y: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """
    1[h(x_i + δ_ij) = y_i]

    Args:
        x: (B, d)
        y: (B,)
        deltas: (B, M, d)

    Returns:
        (B, M) 布尔矩阵
    """
    x = np.asarray(x, dtype=np.float64)
    if deltas.ndim != 3 or deltas.shape[0] != x.shape[0] or deltas.shape[2] != x.shape[1]:
        raise ShapeError("perturbed_correctness", [x.shape, deltas.shape], "expected deltas (B, M, d)")
    B, M, d = deltas.shape
    predictions = clf.predict((x[:, None, :] + deltas).reshape(B * M, d)).reshape(B, M)
    return predictions == np.asarray(y)[:, None]


def nppr_estimate(
    clf: MLPClassifier,
    generator: PerturbationGenerator,
    dataset: LabeledDataset,
    M: int,
    seed: int = 0,
    purpose: StreamPurpose = StreamPurpose.EVAL,
    epoch: int = 0,
    chunk: int = DEFAULT_CHUNK,
) -> float:
    """
    (1/NM)·Σ_i Σ_j 1[h(x_i + 𝒰(ε_ij)) = y_i]，ε 精确采样

    GMM 参数对整个数据集一次前向计算（BN 使用整个评估集的批统计量），之后按输入分块采样
    """
    dataset.require_nonempty()
    if M < 1:
        raise ValueError("M must be >= 1")
    with no_grad():
        params = generator.gmm_params(clf, dataset.x, dataset.y, temps=generator.eval_temps)
    correct = 0
    for start in range(0, len(dataset), chunk):
        index = np.arange(start, min(start + chunk, len(dataset)))
        streams = input_streams(seed, purpose, epoch, dataset.ids[index])
        noise = SamplerNoise.draw(streams, len(index), M, params.K, params.latent_dim)
        batch = generator.sample_exact(params.take(index), M, noise=noise)
        correct += int(perturbed_correctness(clf, dataset.x[index], dataset.y[index], batch.delta).sum())
    return correct / (len(dataset) * M)


def pr_estimate(
    clf: MLPClassifier,
    dataset: LabeledDataset,
    law: PerturbationLaw,
    gamma: float,
    M: int,
    seed: int = 0,
    flip_sign: bool = False,
    chunk: int = DEFAULT_CHUNK,
) -> float:
    """
    固定分布下的 PR；flip_sign=True 时使用同一随机流的相反扰动（成对对称性检验）
    """
    dataset.require_nonempty()
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    if M < 1:
        raise ValueError("M must be >= 1")
    purpose = StreamPurpose.PR_UNIFORM if law.kind is LawKind.UNIFORM_BALL else StreamPurpose.PR_GAUSSIAN
    sign = -1.0 if flip_sign else 1.0
    d = dataset.input_dim
    correct = 0
    for start in range(0, len(dataset), chunk):
        index = np.arange(start, min(start + chunk, len(dataset)))
        streams = input_streams(seed, purpose, 0, dataset.ids[index])
        deltas = sign * np.stack([law.sample(stream, (M, d), gamma) for stream in streams])
        correct += int(perturbed_correctness(clf, dataset.x[index], dataset.y[index], deltas).sum())
    return correct / (len(dataset) * M)


def clean_accuracy(clf: MLPClassifier, dataset: LabeledDataset) -> float:
    dataset.require_nonempty()
    return float(np.mean(clf.predict(dataset.x) == dataset.y))
