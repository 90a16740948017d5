"""
扰动样本导出（供外部 PCA / t-SNE 使用）
每行一个样本：input_id, sample_id, label, component_argmax, latent_*, delta_*
"""
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

from services.data.datasets import LabeledDataset
from services.networks.classifier import MLPClassifier
from services.perturbation.generator import PerturbationGenerator
from services.perturbation.gmm_sampler import SamplerNoise
from services.perturbation.rng import StreamPurpose, input_streams
from services.tensor.tensor import no_grad
from utils.logger import logger


def sample_frame(
    clf: MLPClassifier,
    generator: PerturbationGenerator,
    dataset: LabeledDataset,
    M: int,
    seed: int = 0,
) -> pd.DataFrame:
    dataset.require_nonempty()
    with no_grad():
        params = generator.gmm_params(clf, dataset.x, dataset.y, temps=generator.eval_temps)
    noise = SamplerNoise.draw(
        input_streams(seed, StreamPurpose.EXPORT, 0, dataset.ids), len(dataset), M, params.K, params.latent_dim
    )
    batch = generator.sample_exact(params, M, noise=noise)
    B, D = len(dataset), params.latent_dim
    d = dataset.input_dim
    frame = pd.DataFrame({
        "input_id": np.repeat(dataset.ids, M),
        "sample_id": np.tile(np.arange(M), B),
        "label": np.repeat(dataset.y, M),
        "component_argmax": batch.components.reshape(-1),
    })
    latent = pd.DataFrame(batch.latent.data.reshape(B * M, D), columns=[f"latent_{i}" for i in range(D)])
    delta = pd.DataFrame(batch.delta.reshape(B * M, d), columns=[f"delta_{i}" for i in range(d)])
    return pd.concat([frame, latent, delta], axis=1)


def export_samples(
    clf: MLPClassifier,
    generator: PerturbationGenerator,
    dataset: LabeledDataset,
    M: int,
    path: Union[str, Path],
    seed: int = 0,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = sample_frame(clf, generator, dataset, M, seed=seed)
    frame.to_csv(path, index=False, float_format="%.10g")
    logger.info(f"📦 导出 {len(frame)} 个扰动样本到 {path}")
    return path
