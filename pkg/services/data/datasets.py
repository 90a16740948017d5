"""
合成数据集 - 替代 CIFAR/TinyImageNet 的桌面规模数据
blobs: C 个高斯簇；rings: 二维同心圆环；grid_image: c×h×w 的类别相关平滑图案
"""
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd

from utils.errors import EmptyDatasetError
from utils.logger import logger


@dataclass
class DatasetSpec:
    """数据集描述"""
    kind: str = "blobs"  # 'blobs' | 'rings' | 'grid_image'
    dim: int = 16
    image_shape: Optional[Tuple[int, int, int]] = None
    classes: int = 10
    n_train: int = 800
    n_test: int = 200
    separation: float = 4.0
    noise: float = 1.0
    seed: int = 0


@dataclass
class LabeledDataset:
    """带标签样本，ids 为稳定样本编号（用于随机数子流）"""
    x: np.ndarray
    y: np.ndarray
    num_classes: int
    input_kind: str = "vector"  # 'vector' | 'image'
    image_shape: Optional[Tuple[int, int, int]] = None
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.y.shape != (self.x.shape[0],):
            raise ValueError(f"dataset arrays mismatch: x{self.x.shape} y{self.y.shape}")
        if self.ids is None:
            self.ids = np.arange(len(self.y), dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)

    def __len__(self) -> int:
        return int(self.y.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.x.shape[1])

    def subset(self, index: np.ndarray) -> "LabeledDataset":
        index = np.asarray(index, dtype=np.int64)
        return LabeledDataset(
            x=self.x[index],
            y=self.y[index],
            num_classes=self.num_classes,
            input_kind=self.input_kind,
            image_shape=self.image_shape,
            ids=self.ids[index],
        )

    def require_nonempty(self) -> None:
        if len(self) == 0:
            raise EmptyDatasetError("dataset is empty")

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.x).tobytes())
        digest.update(np.ascontiguousarray(self.y).tobytes())
        return digest.hexdigest()[:16]


def _blobs(spec: DatasetSpec, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    类中心到原点距离为 separation·noise：
    C=2 时为 ±e0（决策边界 x0=0），C<=dim 时取坐标轴方向，否则随机单位方向
    """
    d, c, sigma = spec.dim, spec.classes, spec.noise
    if c == 2:
        directions = np.zeros((2, d))
        directions[0, 0], directions[1, 0] = -1.0, 1.0
    elif c <= d:
        directions = np.eye(d)[:c]
    else:
        directions = rng.normal(size=(c, d))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    centers = spec.separation * sigma * directions
    y = np.arange(n) % c
    x = centers[y] + rng.normal(0.0, sigma, size=(n, d))
    return x, y


def _rings(spec: DatasetSpec, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """第 c 类半径为 (c+1)·separation·noise 的圆环，径向噪声 noise"""
    y = np.arange(n) % spec.classes
    radius = (y + 1) * spec.separation * spec.noise + rng.normal(0.0, spec.noise, size=n)
    angle = rng.uniform(0.0, 2.0 * np.pi, size=n)
    x = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
    return x, y


def _grid_images(spec: DatasetSpec, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """每类一个低频余弦图案（方向与频率随类别变化），再加高斯噪声"""
    c, h, w = spec.image_shape
    rows, cols = np.meshgrid(np.linspace(0.0, 1.0, h), np.linspace(0.0, 1.0, w), indexing="ij")
    patterns = []
    for k in range(spec.classes):
        theta = np.pi * k / spec.classes
        freq = 1.0 + (k % 2)
        wave = np.cos(2.0 * np.pi * freq * (np.cos(theta) * rows + np.sin(theta) * cols))
        patterns.append(np.repeat(wave[None], c, axis=0).reshape(-1))
    patterns = spec.separation * 0.25 * np.stack(patterns)
    y = np.arange(n) % spec.classes
    x = patterns[y] + rng.normal(0.0, spec.noise * 0.3, size=(n, c * h * w))
    return x, y


def make_dataset(spec: DatasetSpec) -> LabeledDataset:
    """按 spec 生成确定性数据集（同 seed 同结果）"""
    n = spec.n_train + spec.n_test
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    if spec.kind == "blobs":
        x, y = _blobs(spec, n, rng)
        kind, image_shape = "vector", None
    elif spec.kind == "rings":
        x, y = _rings(spec, n, rng)
        kind, image_shape = "vector", None
    elif spec.kind == "grid_image":
        if spec.image_shape is None:
            raise ValueError("grid_image dataset requires image_shape")
        x, y = _grid_images(spec, n, rng)
        kind, image_shape = "image", tuple(spec.image_shape)
    else:
        raise ValueError(f"unknown dataset kind '{spec.kind}'")
    perm = rng.permutation(n)
    dataset = LabeledDataset(x=x[perm], y=y[perm], num_classes=spec.classes, input_kind=kind, image_shape=image_shape)
    logger.info(f"📦 生成数据集 {spec.kind}: {n} 个样本, 维度 {dataset.input_dim}, {spec.classes} 类")
    return dataset


def stratified_split(
    dataset: LabeledDataset, test_fraction: float = 0.2, seed: int = 0
) -> Tuple[LabeledDataset, LabeledDataset]:
    """按标签分层切分训练 / 测试集"""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    train_idx, test_idx = [], []
    for label in np.unique(dataset.y):
        members = np.flatnonzero(dataset.y == label)
        members = members[rng.permutation(len(members))]
        n_test = int(round(len(members) * test_fraction))
        test_idx.append(members[:n_test])
        train_idx.append(members[n_test:])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    return dataset.subset(train_idx), dataset.subset(test_idx)


def save_dataset_csv(dataset: LabeledDataset, path: Union[str, Path]) -> Path:
    """CSV 列：feature_0..feature_{d-1}, label, input_id"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(dataset.x, columns=[f"feature_{i}" for i in range(dataset.input_dim)])
    frame["label"] = dataset.y
    frame["input_id"] = dataset.ids
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def load_dataset_csv(
    path: Union[str, Path],
    num_classes: Optional[int] = None,
    image_shape: Optional[Tuple[int, int, int]] = None,
) -> LabeledDataset:
    frame = pd.read_csv(path, float_precision="round_trip")
    if "label" not in frame.columns:
        raise ValueError(f"{path}: missing 'label' column")
    extra = 2 if "input_id" in frame.columns else 1
    feature_cols = [f"feature_{i}" for i in range(len(frame.columns) - extra)]
    missing = [c for c in feature_cols if c not in frame.columns]
    if missing:
        raise ValueError(f"{path}: missing feature columns {missing[:3]}")
    y = frame["label"].to_numpy(dtype=np.int64)
    return LabeledDataset(
        x=frame[feature_cols].to_numpy(dtype=np.float64),
        y=y,
        num_classes=num_classes or int(y.max()) + 1,
        input_kind="image" if image_shape else "vector",
        image_shape=tuple(image_shape) if image_shape else None,
        ids=frame["input_id"].to_numpy(dtype=np.int64) if "input_id" in frame.columns else None,
    )
