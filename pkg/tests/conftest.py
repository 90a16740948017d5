"""
Pytest 配置和共享 fixtures
"""
from typing import Optional

import numpy as np
import pytest

from config.settings import Settings
from services.data.datasets import DatasetSpec, LabeledDataset, make_dataset, stratified_split
from services.networks.classifier import MLPClassifier, train_classifier
from services.networks.heads import DependencyMode, HeadConfig
from services.perturbation.anneal import AnnealSchedule
from services.perturbation.upsample import UpsamplerConfig
from services.robustness.types import DrawCounts, ExperimentKey, RobustnessReport


@pytest.fixture(scope="function")
def settings(tmp_path):
    """每个测试使用独立的输出目录和 SQLite 登记库"""
    return Settings(
        output_root=str(tmp_path / "runs"),
        database_url=f"sqlite:///{tmp_path / 'registry.db'}",
    )


@pytest.fixture(scope="function")
def db_session(settings):
    """为每个测试函数提供数据库会话"""
    with settings.get_session() as session:
        yield session


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ========== 数据与分类器 ==========

def make_linear_classifier(weight: np.ndarray, bias: Optional[np.ndarray] = None) -> MLPClassifier:
    """
    构造无隐藏层的线性分类器 logits = x·W + b

    Args:
        weight: (d, C)
        bias: (C,)，默认为 0
    """
    weight = np.asarray(weight, dtype=np.float64)
    d, C = weight.shape
    clf = MLPClassifier(input_dim=d, num_classes=C, hidden=(), rng=np.random.default_rng(0))
    clf.output.weight.data = weight.copy()
    clf.output.bias.data = np.zeros(C) if bias is None else np.asarray(bias, dtype=np.float64).copy()
    return clf.freeze()


@pytest.fixture
def linear_classifier():
    """线性分类器工厂"""
    return make_linear_classifier


@pytest.fixture(scope="session")
def toy_split():
    """二维两类高斯团，训练 / 测试划分"""
    data = make_dataset(DatasetSpec(kind="blobs", dim=2, classes=2, n_train=60, n_test=30, separation=1.5, seed=3))
    return stratified_split(data, test_fraction=1.0 / 3.0, seed=3)


@pytest.fixture(scope="session")
def toy_classifier(toy_split):
    """在 toy_split 训练集上训练并冻结的小分类器"""
    train, _ = toy_split
    return train_classifier(train, epochs=30, seed=0, hidden=(8, 8), lr=1e-2, batch_size=32).classifier


@pytest.fixture
def toy_head_config():
    return HeadConfig(mode=DependencyMode.JOINT_DEP, K=2, latent_dim=2, hidden_dim=8, label_emb_dim=4)


@pytest.fixture
def toy_upsampler_config():
    return UpsamplerConfig(mode="none", gamma=0.25)


@pytest.fixture
def toy_anneal():
    return AnnealSchedule()


def make_report(
    nppr: float = 0.6,
    pr_uniform: float = 0.7,
    pr_gaussian: float = 0.75,
    ar_pgd: float = 0.5,
    mode: str = "joint",
    K: int = 3,
    gamma: float = 0.25,
    dataset: str = "data-fp",
    classifier: str = "clf-fp",
    draws: Optional[DrawCounts] = None,
) -> RobustnessReport:
    """构造一份只用于验证逻辑的报告"""
    return RobustnessReport(
        nppr_test=nppr,
        nppr_train=nppr,
        pr_gaussian=pr_gaussian,
        pr_uniform=pr_uniform,
        ar_pgd=ar_pgd,
        ar_cw=ar_pgd,
        entropy_ratio=0.5,
        pi_max=0.6,
        pi_min=0.1,
        pi_std=0.2,
        clean_accuracy=0.95,
        key=ExperimentKey(dataset=dataset, classifier=classifier, gamma=gamma),
        mode=mode,
        K=K,
        draws=draws or DrawCounts(n_train=100, n_test=100, nppr_samples=100, pr_samples=100),
    )


@pytest.fixture
def report_factory():
    return make_report


def dataset_from(x: np.ndarray, y: np.ndarray, num_classes: int = 2) -> LabeledDataset:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    return LabeledDataset(x=x, y=y, num_classes=num_classes)
