"""
张量引擎 - numpy float64 稠密张量 + 反向模式自动微分
所有可微运算（生成器训练、PGD/C&W 攻击的输入梯度）都经过这里
"""
import threading
from collections import Counter
from contextlib import contextmanager
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit, log_softmax as _log_softmax, softmax as _softmax

from utils.errors import ShapeError
from utils.logger import logger

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]

LOG_FLOOR = 1e-12
SQRT_FLOOR = 1e-24

_grad_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad():
    """在该上下文内的运算不记录计算图（线程内有效）"""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class NumericsCounter:
    """数值保护计数器：记录 log / sqrt 触发下限截断的次数"""

    def __init__(self):
        self._counts: Counter = Counter()
        self._lock = threading.Lock()

    def record(self, op: str, count: int) -> None:
        if count <= 0:
            return
        with self._lock:
            first = self._counts[op] == 0
            self._counts[op] += int(count)
        if first:
            logger.debug(f"⚠️ {op} 输入触发数值下限截断 ({count} 个元素)")

    def snapshot(self) -> Dict[str, int]:
        with self._lock:
            return dict(self._counts)

    def reset(self) -> None:
        with self._lock:
            self._counts.clear()


numerics = NumericsCounter()


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """把广播后的梯度求和回原始形状"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, *shapes: Tuple[int, ...]) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError as e:
        raise ShapeError(op, shapes, "not broadcastable") from e


class Tensor:
    """稠密张量，可选参与梯度记录"""

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        _parents: Tuple["Tensor", ...] = (),
        _op: str = "leaf",
        name: Optional[str] = None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=np.float64, copy=True) if not isinstance(data, np.ndarray) else data.astype(np.float64, copy=False)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents = _parents
        self._op = _op
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    # ---------- 基本属性 ----------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad}{label})"

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + grad

    # ---------- 反向传播 ----------
    def _topological_order(self) -> List["Tensor"]:
        """按创建顺序的拓扑序（迭代 DFS，父节点按输入顺序访问，保证确定性）"""
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if id(parent) not in visited and parent.requires_grad:
                    stack.append((parent, False))
        return order

    def backward(self) -> None:
        """从标量根节点反向传播，叶子节点梯度累加"""
        if self.size != 1:
            raise ShapeError("backward", [self.shape], "root must be a scalar")
        if not self.requires_grad:
            return
        order = self._topological_order()
        for node in order:
            if not node.is_leaf:
                node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # ---------- 运算符 ----------
    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, axis1: int, axis2: int) -> "Tensor":
        return swapaxes(self, axis1, axis2)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def max(self, axis: int = -1) -> "Tensor":
        return reduce_max(self, axis=axis)

    def relu(self) -> "Tensor":
        return relu(self)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def softplus(self) -> "Tensor":
        return softplus(self)

    def softmax(self, axis: int = -1) -> "Tensor":
        return softmax(self, axis=axis)


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value, requires_grad=False)


def parameter(data: ArrayLike, name: Optional[str] = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _make(data: np.ndarray, parents: Tuple[Tensor, ...], op: str, backward: Callable[[np.ndarray], None]) -> Tensor:
    track = is_grad_enabled() and any(p.requires_grad for p in parents)
    if not track:
        return Tensor(data, requires_grad=False, _op=op)
    out = Tensor(data, requires_grad=True, _parents=parents, _op=op)
    out._backward = backward
    return out


# ============ 逐元素二元运算 ============

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a.shape, b.shape)

    def _backward(g: np.ndarray) -> None:
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), "add", _backward)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a.shape, b.shape)

    def _backward(g: np.ndarray) -> None:
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), "sub", _backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a.shape, b.shape)

    def _backward(g: np.ndarray) -> None:
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), "mul", _backward)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a.shape, b.shape)
    out = a.data / b.data

    def _backward(g: np.ndarray) -> None:
        a._accumulate(_unbroadcast(g / b.data, a.shape))
        b._accumulate(_unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), "div", _backward)


def scale(x: ArrayLike, factor: float) -> Tensor:
    """乘以常数标量"""
    x = as_tensor(x)
    factor = float(factor)

    def _backward(g: np.ndarray) -> None:
        x._accumulate(g * factor)

    return _make(x.data * factor, (x,), "scale", _backward)


def neg(x: ArrayLike) -> Tensor:
    return scale(x, -1.0)


# ============ 矩阵运算 ============

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """批量矩阵乘法，前导维度按 numpy 规则广播"""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", [a.shape, b.shape], "expected (..., n, k) @ (..., k, m)")
    _broadcast_shape("matmul", a.shape[:-2], b.shape[:-2])

    def _backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(a.data @ b.data, (a, b), "matmul", _backward)


def affine(x: ArrayLike, weight: ArrayLike, bias: Optional[ArrayLike] = None) -> Tensor:
    """Wx + b（x: (batch, in), weight: (in, out), bias: (out,)）"""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError("affine", [x.shape, weight.shape])
    out = matmul(x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[1],):
            raise ShapeError("affine", [x.shape, weight.shape, bias.shape], "bias must match output width")
        out = add(out, bias)
    return out


# ============ 逐元素一元运算 ============

def relu(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def _backward(g: np.ndarray) -> None:
        x._accumulate(g * mask)

    return _make(np.where(mask, x.data, 0.0), (x,), "relu", _backward)


def tanh(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)

    def _backward(g: np.ndarray) -> None:
        x._accumulate(g * (1.0 - out * out))

    return _make(out, (x,), "tanh", _backward)


def exp(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)

    def _backward(g: np.ndarray) -> None:
        x._accumulate(g * out)

    return _make(out, (x,), "exp", _backward)


def log(x: ArrayLike, floor: float = LOG_FLOOR) -> Tensor:
    """自然对数，输入低于 floor 时截断并计数"""
    x = as_tensor(x)
    numerics.record("log", int(np.count_nonzero(x.data < floor)))
    clipped = np.maximum(x.data, floor)
    active = x.data >= floor

    def _backward(g: np.ndarray) -> None:
        x._accumulate(np.where(active, g / clipped, 0.0))

    return _make(np.log(clipped), (x,), "log", _backward)


def sqrt(x: ArrayLike, floor: float = SQRT_FLOOR) -> Tensor:
    x = as_tensor(x)
    numerics.record("sqrt", int(np.count_nonzero(x.data < 0)))
    clipped = np.maximum(x.data, floor)
    out = np.sqrt(clipped)
    active = x.data >= floor

    def _backward(g: np.ndarray) -> None:
        x._accumulate(np.where(active, g * 0.5 / out, 0.0))

    return _make(out, (x,), "sqrt", _backward)


def square(x: ArrayLike) -> Tensor:
    x = as_tensor(x)

    def _backward(g: np.ndarray) -> None:
        x._accumulate(2.0 * g * x.data)

    return _make(x.data * x.data, (x,), "square", _backward)


def sigmoid(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = expit(x.data)

    def _backward(g: np.ndarray) -> None:
        x._accumulate(g * out * (1.0 - out))

    return _make(out, (x,), "sigmoid", _backward)


def softplus(x: ArrayLike) -> Tensor:
    """log(1 + e^x)，数值稳定形式"""
    x = as_tensor(x)

    def _backward(g: np.ndarray) -> None:
        x._accumulate(g * expit(x.data))

    return _make(np.logaddexp(0.0, x.data), (x,), "softplus", _backward)


def softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    out = _softmax(x.data, axis=axis)

    def _backward(g: np.ndarray) -> None:
        x._accumulate(out * (g - np.sum(g * out, axis=axis, keepdims=True)))

    return _make(out, (x,), "softmax", _backward)


def log_softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    out = _log_softmax(x.data, axis=axis)

    def _backward(g: np.ndarray) -> None:
        x._accumulate(g - np.exp(out) * np.sum(g, axis=axis, keepdims=True))

    return _make(out, (x,), "log_softmax", _backward)


# ============ 归约 ============

def _normalize_axes(axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def reduce_sum(x: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _normalize_axes(axis, x.ndim)

    def _backward(g: np.ndarray) -> None:
        if not keepdims:
            g = np.expand_dims(g, axes)
        x._accumulate(np.broadcast_to(g, x.shape))

    return _make(np.sum(x.data, axis=axes, keepdims=keepdims), (x,), "reduce_sum", _backward)


def reduce_mean(x: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _normalize_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1

    def _backward(g: np.ndarray) -> None:
        if not keepdims:
            g = np.expand_dims(g, axes)
        x._accumulate(np.broadcast_to(g / count, x.shape))

    return _make(np.mean(x.data, axis=axes, keepdims=keepdims), (x,), "reduce_mean", _backward)


def reduce_max(x: ArrayLike, axis: int = -1) -> Tensor:
    """沿 axis 取最大值，并列时取最小下标，梯度只回传给该下标"""
    x = as_tensor(x)
    axis = axis % x.ndim
    index = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(index, axis), axis=axis).squeeze(axis)

    def _backward(g: np.ndarray) -> None:
        grad = np.zeros_like(x.data)
        np.put_along_axis(grad, np.expand_dims(index, axis), np.expand_dims(g, axis), axis=axis)
        x._accumulate(grad)

    return _make(out, (x,), "reduce_max", _backward)


# ============ 形状 / 索引 ============

def reshape(x: ArrayLike, shape: Tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeError("reshape", [x.shape, tuple(shape)]) from e

    def _backward(g: np.ndarray) -> None:
        x._accumulate(g.reshape(x.shape))

    return _make(out, (x,), "reshape", _backward)


def swapaxes(x: ArrayLike, axis1: int, axis2: int) -> Tensor:
    x = as_tensor(x)

    def _backward(g: np.ndarray) -> None:
        x._accumulate(np.swapaxes(g, axis1, axis2))

    return _make(np.swapaxes(x.data, axis1, axis2), (x,), "swapaxes", _backward)


def gather_rows(table: ArrayLike, index: Union[np.ndarray, Sequence[int]]) -> Tensor:
    """按行索引取值（嵌入查表），重复下标的梯度累加"""
    table = as_tensor(table)
    index = np.asarray(index, dtype=np.int64)
    if index.ndim != 1 or (index.size and (index.min() < 0 or index.max() >= table.shape[0])):
        raise ShapeError("gather_rows", [table.shape, index.shape], "row index out of range")

    def _backward(g: np.ndarray) -> None:
        grad = np.zeros_like(table.data)
        np.add.at(grad, index, g)
        table._accumulate(grad)

    return _make(table.data[index], (table,), "gather_rows", _backward)


def take_along(x: ArrayLike, index: Union[np.ndarray, Sequence[int]]) -> Tensor:
    """x: (batch, C)，逐行取 index 指定的列，输出 (batch,)"""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    if x.ndim != 2 or index.shape != (x.shape[0],):
        raise ShapeError("take_along", [x.shape, index.shape])
    rows = np.arange(x.shape[0])

    def _backward(g: np.ndarray) -> None:
        grad = np.zeros_like(x.data)
        grad[rows, index] = g
        x._accumulate(grad)

    return _make(x.data[rows, index], (x,), "take_along", _backward)


def concat(tensors: Sequence[ArrayLike], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError("concat", [t.shape for t in tensors]) from e
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def _backward(g: np.ndarray) -> None:
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(piece)

    return _make(out, tuple(tensors), "concat", _backward)


# ============ 归一化 ============

def batch_norm(x: ArrayLike, gamma: ArrayLike, beta: ArrayLike, eps: float = 1e-5) -> Tensor:
    """批统计量归一化（训练与评估一致，不维护滑动统计量）"""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError("batch_norm", [x.shape, gamma.shape, beta.shape])
    n = x.shape[0]
    mean = x.data.mean(axis=0)
    var = x.data.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mean) * inv_std

    def _backward(g: np.ndarray) -> None:
        gamma._accumulate(np.sum(g * x_hat, axis=0))
        beta._accumulate(np.sum(g, axis=0))
        if x.requires_grad:
            d_hat = g * gamma.data
            dx = inv_std / n * (n * d_hat - d_hat.sum(axis=0) - x_hat * np.sum(d_hat * x_hat, axis=0))
            x._accumulate(dx)

    return _make(gamma.data * x_hat + beta.data, (x, gamma, beta), "batch_norm", _backward)


# ============ 统一入口 ============

_OPS: Dict[str, Callable[..., Tensor]] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "matmul": matmul,
    "affine": affine,
    "relu": relu,
    "tanh": tanh,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "square": square,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "batch_norm": batch_norm,
    "reduce_mean": reduce_mean,
    "reduce_sum": reduce_sum,
    "reduce_max": reduce_max,
    "gather_row": gather_rows,
    "take_along": take_along,
    "concat": concat,
    "scale": scale,
    "reshape": reshape,
    "swapaxes": swapaxes,
}


def forward_op(kind: str, *inputs, **kwargs) -> Tensor:
    """按名字执行一个前向运算并记录到计算图"""
    op = _OPS.get(kind)
    if op is None:
        raise ValueError(f"unsupported op kind '{kind}', expected one of {sorted(_OPS)}")
    if kind == "concat":
        return op(list(inputs), **kwargs)
    return op(*inputs, **kwargs)


def supported_ops() -> List[str]:
    return sorted(_OPS)


def graph_nodes(root: Tensor) -> List[Dict]:
    """计算图的节点记录（op、输入形状、输出形状），按拓扑序"""
    return [
        {"op": node._op, "inputs": [p.shape for p in node._parents], "output": node.shape}
        for node in root._topological_order()
    ]


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
