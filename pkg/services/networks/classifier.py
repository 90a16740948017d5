"""
被评估的目标分类器 - affine+relu 堆叠的 MLP，训练后冻结
"""
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from services.data.datasets import LabeledDataset
from services.networks.layers import Linear, Module
from services.tensor.optim import Adam
from services.tensor.snapshot import load_snapshot, save_snapshot
from services.tensor.tensor import Tensor, as_tensor, log_softmax, no_grad, reduce_mean, relu, scale, take_along
from utils.errors import ShapeError
from utils.logger import logger

SNAPSHOT_KIND = "classifier"


@dataclass(frozen=True)
class FeatureHook:
    """倒数第二层激活的位置与宽度"""
    layer_index: int
    feature_dim: int


class MLPClassifier(Module):
    """
    分类器 h：input → [Linear → ReLU] × len(hidden) → Linear → C 个 logits

    input_kind='image' 时输入是展平的 c×h×w 网格
    """

    def __init__(
        self,
        input_dim: int,
        num_classes: int,
        hidden: Sequence[int] = (32, 32),
        rng: Optional[np.random.Generator] = None,
        input_kind: str = "vector",
        image_shape: Optional[Tuple[int, int, int]] = None,
    ):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        if input_kind == "image" and (image_shape is None or int(np.prod(image_shape)) != input_dim):
            raise ShapeError("MLPClassifier", [(input_dim,), tuple(image_shape or ())], "image_shape must flatten to input_dim")
        self.input_dim = input_dim
        self.num_classes = num_classes
        self.hidden = tuple(int(h) for h in hidden)
        self.input_kind = input_kind
        self.image_shape = tuple(image_shape) if image_shape else None
        self.frozen = False

        widths = [input_dim, *self.hidden]
        self.layers: List[Linear] = []
        for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
            self.layers.append(self.add_child(f"hidden{i}", Linear(n_in, n_out, rng)))
        self.output = self.add_child("output", Linear(widths[-1], num_classes, rng))

    @property
    def hook(self) -> FeatureHook:
        return FeatureHook(layer_index=len(self.layers) - 1, feature_dim=self.hidden[-1] if self.hidden else self.input_dim)

    def _check_input(self, x: Tensor) -> None:
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError("classifier", [x.shape], f"expected (batch, {self.input_dim})")

    def features(self, x) -> Tensor:
        """倒数第二层激活 (batch, feature_dim)"""
        x = as_tensor(x)
        self._check_input(x)
        h = x
        for layer in self.layers:
            h = relu(layer(h))
        return h

    def __call__(self, x) -> Tensor:
        return self.output(self.features(x))

    def logits(self, x: np.ndarray, chunk: int = 4096) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        with no_grad():
            parts = [self(x[i:i + chunk]).data for i in range(0, len(x), chunk)]
        return np.concatenate(parts, axis=0) if parts else np.zeros((0, self.num_classes))

    def predict(self, x: np.ndarray, chunk: int = 4096) -> np.ndarray:
        """不建图的前向，返回预测标签（并列取最小下标）"""
        return np.argmax(self.logits(x, chunk=chunk), axis=1)

    def freeze(self) -> "MLPClassifier":
        super().freeze()
        self.frozen = True
        return self

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        for name, value in sorted(self.state_dict().items()):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(value).tobytes())
        return digest.hexdigest()[:16]


@dataclass
class ClassifierTrainResult:
    classifier: MLPClassifier
    train_accuracy: float
    reached_threshold: bool


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    return scale(reduce_mean(take_along(log_softmax(logits, axis=1), labels)), -1.0)


def train_classifier(
    dataset: LabeledDataset,
    epochs: int = 200,
    seed: int = 0,
    hidden: Sequence[int] = (32, 32),
    lr: float = 1e-2,
    batch_size: int = 128,
    accuracy_threshold: float = 0.9,
) -> ClassifierTrainResult:
    """
    小批量 Adam 训练 softmax 交叉熵，训练结束后冻结

    Args:
        dataset: 训练集（非空，标签在 [0, C)）
        epochs: 训练轮数
        seed: 初始化与洗牌的随机种子
        hidden: 隐藏层宽度
        lr: 学习率
        batch_size: 批大小
        accuracy_threshold: 期望达到的训练准确率

    Returns:
        ClassifierTrainResult；未达阈值只记录警告，由调用方决定是否继续
    """
    dataset.require_nonempty()
    if dataset.y.min() < 0 or dataset.y.max() >= dataset.num_classes:
        raise ValueError(f"labels must lie in [0, {dataset.num_classes})")

    rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    clf = MLPClassifier(
        dataset.input_dim,
        dataset.num_classes,
        hidden=hidden,
        rng=rng,
        input_kind=dataset.input_kind,
        image_shape=dataset.image_shape,
    )
    optimizer = Adam(clf.parameters(), lr=lr)
    n = len(dataset)
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            optimizer.zero_grad()
            loss = cross_entropy(clf(dataset.x[idx]), dataset.y[idx])
            loss.backward()
            optimizer.step()

    accuracy = float(np.mean(clf.predict(dataset.x) == dataset.y))
    clf.freeze()
    reached = accuracy >= accuracy_threshold
    if reached:
        logger.info(f"✅ 分类器训练完成: 训练准确率 {accuracy:.4f}")
    else:
        logger.warning(f"⚠️ 分类器训练准确率 {accuracy:.4f} 未达到阈值 {accuracy_threshold:.2f}")
    return ClassifierTrainResult(classifier=clf, train_accuracy=accuracy, reached_threshold=reached)


def extract_features(clf: MLPClassifier, x) -> Tensor:
    """
    倒数第二层特征；冻结的分类器参数不接收梯度，x 若 requires_grad 则梯度可回传到 x
    """
    return clf.features(x)


def save_classifier(clf: MLPClassifier, path: Union[str, Path]) -> Path:
    meta = {
        "input_dim": clf.input_dim,
        "num_classes": clf.num_classes,
        "hidden": list(clf.hidden),
        "input_kind": clf.input_kind,
        "image_shape": list(clf.image_shape) if clf.image_shape else None,
    }
    return save_snapshot(path, clf.state_dict(), kind=SNAPSHOT_KIND, meta=meta)


def load_classifier(path: Union[str, Path]) -> MLPClassifier:
    """读取快照并返回冻结的分类器"""
    tensors, meta = load_snapshot(path, expected_kind=SNAPSHOT_KIND)
    clf = MLPClassifier(
        int(meta["input_dim"]),
        int(meta["num_classes"]),
        hidden=meta["hidden"],
        input_kind=meta["input_kind"],
        image_shape=tuple(meta["image_shape"]) if meta.get("image_shape") else None,
    )
    clf.load_state_dict(tensors)
    return clf.freeze()
