"""
上采样与预算映射

bicubic_image: 可选线性预映射 → 可分离双三次插值 (c, h', w') → (c, h, w)
linear_vector: 仿射映射 latent_dim → d
none:          latent_dim 必须等于输入维度
最后统一做 g_B(u) = γ·tanh(u)
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from services.networks.layers import Linear, Module
from services.tensor.tensor import Tensor, as_tensor, matmul, reshape, scale, swapaxes, tanh
from utils.errors import ShapeError

UPSAMPLER_MODES = ("bicubic_image", "linear_vector", "none")
KEYS_A = -0.5


def bicubic_kernel(a):
    """
    Keys 三次卷积核（a=-0.5）
    |a|<1: 1.5|a|³ − 2.5|a|² + 1；1<=|a|<2: −0.5|a|³ + 2.5|a|² − 4|a| + 2；否则 0
    """
    x = np.abs(np.asarray(a, dtype=np.float64))
    near = (KEYS_A + 2.0) * x ** 3 - (KEYS_A + 3.0) * x ** 2 + 1.0
    far = KEYS_A * x ** 3 - 5.0 * KEYS_A * x ** 2 + 8.0 * KEYS_A * x - 4.0 * KEYS_A
    out = np.where(x < 1.0, near, np.where(x < 2.0, far, 0.0))
    return float(out) if out.ndim == 0 else out


def interpolation_matrix(n_in: int, n_out: int) -> np.ndarray:
    """
    一维双三次插值矩阵 W (n_in, n_out)，output = input @ W

    角点对齐：输出第 j 个采样点对应源坐标 j·(n_in−1)/(n_out−1)；
    4 个邻点下标越界时钳到边缘
    """
    if n_in < 1 or n_out < 1:
        raise ShapeError("interpolation_matrix", [(n_in,), (n_out,)], "sizes must be positive")
    weights = np.zeros((n_in, n_out))
    step = (n_in - 1) / (n_out - 1) if n_out > 1 else 0.0
    for j in range(n_out):
        source = j * step
        base = int(np.floor(source))
        frac = source - base
        for m in (-1, 0, 1, 2):
            index = min(max(base + m, 0), n_in - 1)
            weights[index, j] += bicubic_kernel(frac - m)
    return weights


@dataclass
class UpsamplerConfig:
    mode: str = "linear_vector"
    learnable_premap: bool = True
    latent_grid: Optional[Tuple[int, int, int]] = None
    gamma: float = 16 / 255
    target_shape: Optional[Tuple[int, ...]] = None  # (d,) 或 (c, h, w)

    def __post_init__(self):
        if self.mode not in UPSAMPLER_MODES:
            raise ValueError(f"unknown upsampler mode '{self.mode}', expected one of {UPSAMPLER_MODES}")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if self.mode == "bicubic_image":
            if self.latent_grid is None or self.target_shape is None or len(self.target_shape) != 3:
                raise ShapeError("upsampler", [tuple(self.latent_grid or ()), tuple(self.target_shape or ())],
                                 "bicubic_image needs latent_grid (c, h', w') and target (c, h, w)")
            c, hl, wl = self.latent_grid
            ct, h, w = self.target_shape
            if c != ct or hl > h or wl > w:
                raise ShapeError("upsampler", [tuple(self.latent_grid), tuple(self.target_shape)],
                                 "latent grid must share channels and not exceed the target size")

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.target_shape))


class Upsampler(Module):
    """latent (N, D) → 输入空间 (N, d)，不含预算映射"""

    def __init__(self, cfg: UpsamplerConfig, latent_dim: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        self.latent_dim = latent_dim
        self.output_dim = cfg.input_dim
        self.premap = None
        if cfg.mode == "bicubic_image":
            c, hl, wl = cfg.latent_grid
            if c * hl * wl != latent_dim:
                raise ShapeError("upsampler", [(latent_dim,), tuple(cfg.latent_grid)], "latent grid must flatten to latent_dim")
            self.premap = self.add_child("premap", Linear(latent_dim, latent_dim, rng, weight_std=1.0 / np.sqrt(latent_dim)))
            self.rows = interpolation_matrix(hl, cfg.target_shape[1])
            self.cols = interpolation_matrix(wl, cfg.target_shape[2])
        elif cfg.mode == "linear_vector":
            self.premap = self.add_child("premap", Linear(latent_dim, self.output_dim, rng, weight_std=1.0 / np.sqrt(latent_dim)))
        elif latent_dim != self.output_dim:
            raise ShapeError("upsampler", [(latent_dim,), (self.output_dim,)], "mode 'none' needs latent_dim == input dim")
        if self.premap is not None and not cfg.learnable_premap:
            self.premap.freeze()

    def __call__(self, latent) -> Tensor:
        return upsample(latent, self)


def upsample(latent, upsampler: Upsampler) -> Tensor:
    latent = as_tensor(latent)
    if latent.ndim != 2 or latent.shape[1] != upsampler.latent_dim:
        raise ShapeError("upsample", [latent.shape], f"expected (N, {upsampler.latent_dim})")
    cfg = upsampler.cfg
    if cfg.mode == "none":
        return latent
    mapped = upsampler.premap(latent)
    if cfg.mode == "linear_vector":
        return mapped
    n = latent.shape[0]
    c, hl, wl = cfg.latent_grid
    _, h, w = cfg.target_shape
    grid = reshape(mapped, (n, c, hl, wl))
    wide = matmul(grid, upsampler.cols)  # (n, c, h', w)
    tall = swapaxes(matmul(swapaxes(wide, -1, -2), upsampler.rows), -1, -2)  # (n, c, h, w)
    return reshape(tall, (n, c * h * w))


def apply_budget(u, gamma: float) -> Tensor:
    """γ·tanh(u)，输出严格落在 (−γ, γ) 内

    系数为 γ·nextafter(1, 0)，tanh 饱和为 ±1 时输出仍小于 γ
    """
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    return scale(tanh(u), gamma * np.nextafter(1.0, 0.0))
