"""
网络基础层：Module / Linear / BatchNorm / LabelEmbedding
"""
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from services.tensor.tensor import Tensor, affine, batch_norm, gather_rows, parameter, reduce_sum, sqrt, square
from utils.errors import ShapeError


class Module:
    """参数容器：有序命名参数 + 子模块"""

    def __init__(self):
        self._params: Dict[str, Tensor] = {}
        self._children: Dict[str, "Module"] = {}

    def register(self, name: str, tensor: Tensor) -> Tensor:
        tensor.name = name
        self._params[name] = tensor
        return tensor

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield f"{prefix}{name}", p
        for child_name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{child_name}.")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> List[Tensor]:
        return [p for p in self.parameters() if p.requires_grad]

    def freeze(self) -> "Module":
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        if missing:
            raise KeyError(f"missing parameters in state: {missing}")
        for name, p in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ShapeError("load_state_dict", [p.shape, value.shape], name)
            p.data = value.copy()


class Linear(Module):
    """仿射层 y = x W + b，He 初始化（weight_std 可覆盖）"""

    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        weight_std: Optional[float] = None,
        bias_init: Optional[np.ndarray] = None,
    ):
        super().__init__()
        std = np.sqrt(2.0 / in_features) if weight_std is None else weight_std
        self.in_features = in_features
        self.out_features = out_features
        self.weight = self.register("weight", parameter(rng.normal(0.0, std, size=(in_features, out_features))))
        bias = np.zeros(out_features) if bias_init is None else np.asarray(bias_init, dtype=np.float64)
        self.bias = self.register("bias", parameter(bias))

    def __call__(self, x: Tensor) -> Tensor:
        return affine(x, self.weight, self.bias)


class BatchNorm(Module):
    """批统计量 BatchNorm（无滑动均值）"""

    def __init__(self, features: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = self.register("gamma", parameter(np.ones(features)))
        self.beta = self.register("beta", parameter(np.zeros(features)))

    def __call__(self, x: Tensor) -> Tensor:
        return batch_norm(x, self.gamma, self.beta, eps=self.eps)


class LabelEmbedding(Module):
    """可学习标签嵌入，normalized=True 时按行 L2 归一化"""

    def __init__(self, num_classes: int, dim: int, rng: np.random.Generator, normalized: bool = True):
        super().__init__()
        self.normalized = normalized
        self.table = self.register("table", parameter(rng.normal(0.0, 1.0, size=(num_classes, dim))))

    def __call__(self, labels: np.ndarray) -> Tensor:
        rows = gather_rows(self.table, labels)
        if not self.normalized:
            return rows
        norm = sqrt(reduce_sum(square(rows), axis=1, keepdims=True))
        return rows / norm
