"""
网格 oracle - 低维（≤3）下穷举 γ 球，独立于 MC 估计器验证 AR / PR

只依赖分类器前向；不复用 robustness 包里的任何估计代码
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.stats import norm

from services.networks.classifier import MLPClassifier
from services.robustness.types import LawKind, PerturbationLaw
from utils.errors import GridCapError, ShapeError

DEFAULT_GRID_CAP = 1_000_000
MAX_EXHAUSTIVE_DIMS = 3
EVAL_CHUNK = 65_536


@dataclass(frozen=True)
class GridSpec:
    dims: int
    points_per_dim: int = 21
    gamma: float = 0.1
    cap: int = DEFAULT_GRID_CAP

    def __post_init__(self):
        if not 1 <= self.dims <= MAX_EXHAUSTIVE_DIMS:
            raise GridCapError(f"exhaustive grid supports 1..{MAX_EXHAUSTIVE_DIMS} dims, got {self.dims}")
        if self.points_per_dim < 3 or self.points_per_dim % 2 == 0:
            raise ValueError("points_per_dim must be odd and >= 3")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.total_points > self.cap:
            raise GridCapError(f"grid has {self.total_points} points, cap is {self.cap}")

    @property
    def total_points(self) -> int:
        return self.points_per_dim ** self.dims


@dataclass
class ArVerdict:
    robust: bool
    worst_point: Optional[np.ndarray]
    worst_offset: Optional[np.ndarray]
    flipping_points: int


def _product(axes: Tuple[np.ndarray, ...]) -> np.ndarray:
    """按字典序（最后一维变化最快）展开的张量积网格"""
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def _check_point(x: np.ndarray, grid: GridSpec, cap: int, points: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if len(x) > MAX_EXHAUSTIVE_DIMS:
        raise GridCapError(f"input dim {len(x)} exceeds the exhaustive limit {MAX_EXHAUSTIVE_DIMS}")
    if len(x) != grid.dims:
        raise ShapeError("oracle", [x.shape, (grid.dims,)], "input dim must equal grid dims")
    if points > cap:
        raise GridCapError(f"grid has {points} points, cap is {cap}")
    return x


def _logits(clf: MLPClassifier, points: np.ndarray) -> np.ndarray:
    return np.concatenate([clf.logits(points[i:i + EVAL_CHUNK]) for i in range(0, len(points), EVAL_CHUNK)])


def oracle_ar(clf: MLPClassifier, x: np.ndarray, y: int, grid: GridSpec) -> ArVerdict:
    """
    在含端点的 γ 球顶点网格上检查是否存在翻转标签的点

    Returns:
        ArVerdict：robust 为 True 当且仅当没有网格点被误分类；
        否则 worst_point 为间隔最小（最具破坏性）的翻转点，并列取字典序最小下标
    """
    x = _check_point(x, grid, grid.cap, grid.total_points)
    axis = np.linspace(-grid.gamma, grid.gamma, grid.points_per_dim)
    offsets = _product((axis,) * grid.dims)
    logits = _logits(clf, x[None, :] + offsets)
    flips = np.argmax(logits, axis=1) != y
    if not flips.any():
        return ArVerdict(robust=True, worst_point=None, worst_offset=None, flipping_points=0)
    others = logits.copy()
    others[:, y] = -np.inf
    margins = logits[:, y] - others.max(axis=1)
    margins[~flips] = np.inf
    worst = int(np.argmin(margins))
    return ArVerdict(
        robust=False,
        worst_point=x + offsets[worst],
        worst_offset=offsets[worst].copy(),
        flipping_points=int(flips.sum()),
    )


def quadrature_1d(law: PerturbationLaw, gamma: float, cells: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    一维求积节点与权重

    uniform_ball: cells 个等宽单元的中点，等权
    clipped_gaussian: 单元中点，权重为该单元的正态概率；再加 ±γ 处的截断原子
    """
    edges = np.linspace(-gamma, gamma, cells + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    if law.kind is LawKind.UNIFORM_BALL:
        return centers, np.full(cells, 1.0 / cells)
    sigma = law.sigma_for(gamma)
    cdf = norm.cdf(edges / sigma)
    tail = norm.cdf(-gamma / sigma)
    nodes = np.concatenate([[-gamma], centers, [gamma]])
    weights = np.concatenate([[tail], np.diff(cdf), [tail]])
    return nodes, weights


def oracle_pr(clf: MLPClassifier, x: np.ndarray, y: int, law: PerturbationLaw, grid: GridSpec) -> float:
    """张量积求积估计 PR：Σ_g 1[h(x+g)=y]·w(g) / Σ_g w(g)"""
    nodes, weights = quadrature_1d(law, grid.gamma, grid.points_per_dim)
    x = _check_point(x, grid, grid.cap, len(nodes) ** grid.dims)
    offsets = _product((nodes,) * grid.dims)
    mass = np.prod(_product((weights,) * grid.dims), axis=1)
    correct = np.argmax(_logits(clf, x[None, :] + offsets), axis=1) == y
    return float(np.sum(mass * correct) / np.sum(mass))


def robust_fraction(clf: MLPClassifier, xs: np.ndarray, ys: np.ndarray, grid: GridSpec) -> float:
    """数据集中网格 oracle 判为鲁棒的点的比例（Dirac 最优扰动下的 NPPR 下界）"""
    verdicts = [oracle_ar(clf, x, int(y), grid).robust for x, y in zip(xs, ys)]
    return float(np.mean(verdicts)) if verdicts else 0.0
