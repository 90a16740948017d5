"""
鲁棒性评估的数据类型：基线扰动分布、实验键、RobustnessReport
"""
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, Optional

import numpy as np

DEFAULT_SIGMA_RULE = 1.0 / 3.0

PROBABILITY_FIELDS = (
    "nppr_test",
    "nppr_train",
    "pr_gaussian",
    "pr_uniform",
    "ar_pgd",
    "ar_cw",
    "clean_accuracy",
    "entropy_ratio",
)


class LawKind(str, Enum):
    UNIFORM_BALL = "uniform_ball"
    CLIPPED_GAUSSIAN = "clipped_gaussian"


@dataclass(frozen=True)
class PerturbationLaw:
    """
    固定的基线扰动分布（PR 使用）

    uniform_ball: L∞ 球内均匀分布
    clipped_gaussian: N(0, σ²) 逐元素截断到 [−γ, γ]；sigma 为空时 σ = sigma_rule·γ
    """
    kind: LawKind = LawKind.UNIFORM_BALL
    sigma: Optional[float] = None
    sigma_rule: float = DEFAULT_SIGMA_RULE

    @classmethod
    def uniform(cls) -> "PerturbationLaw":
        return cls(LawKind.UNIFORM_BALL)

    @classmethod
    def clipped_gaussian(cls, sigma: Optional[float] = None, sigma_rule: float = DEFAULT_SIGMA_RULE) -> "PerturbationLaw":
        return cls(LawKind.CLIPPED_GAUSSIAN, sigma=sigma, sigma_rule=sigma_rule)

    def sigma_for(self, gamma: float) -> float:
        return float(self.sigma) if self.sigma is not None else self.sigma_rule * gamma

    def sample(self, rng: np.random.Generator, shape, gamma: float) -> np.ndarray:
        if self.kind is LawKind.UNIFORM_BALL:
            return rng.uniform(-gamma, gamma, size=shape)
        return np.clip(rng.normal(0.0, self.sigma_for(gamma), size=shape), -gamma, gamma)


@dataclass(frozen=True)
class ExperimentKey:
    """同一 (数据集, 分类器, γ) 下的报告才可以互相比较"""
    dataset: str
    classifier: str
    gamma: float

    def matches(self, other: "ExperimentKey") -> bool:
        return (
            self.dataset == other.dataset
            and self.classifier == other.classifier
            and np.isclose(self.gamma, other.gamma, rtol=0.0, atol=1e-15)
        )


@dataclass
class DrawCounts:
    """各估计量的指示变量个数，用于计算 MC 半宽"""
    n_train: int = 0
    n_test: int = 0
    nppr_samples: int = 0
    pr_samples: int = 0

    @property
    def nppr_test_draws(self) -> int:
        return self.n_test * self.nppr_samples

    @property
    def nppr_train_draws(self) -> int:
        return self.n_train * self.nppr_samples

    @property
    def pr_draws(self) -> int:
        return self.n_test * self.pr_samples


@dataclass
class RobustnessReport:
    nppr_test: float
    nppr_train: float
    pr_gaussian: float
    pr_uniform: float
    ar_pgd: float
    ar_cw: float
    entropy_ratio: float
    pi_max: float
    pi_min: float
    pi_std: float
    clean_accuracy: float
    key: ExperimentKey
    mode: str = "independent"
    K: int = 1
    draws: DrawCounts = field(default_factory=DrawCounts)
    seed: int = 0
    input_dim: int = 0

    def __post_init__(self):
        for name in PROBABILITY_FIELDS:
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "RobustnessReport":
        payload = dict(payload)
        payload.pop("summary", None)
        payload["key"] = ExperimentKey(**payload["key"])
        payload["draws"] = DrawCounts(**payload.get("draws", {}))
        return cls(**payload)

    def summary(self) -> Dict[str, str]:
        """人类可读摘要：概率以百分比表示，保留两位小数"""
        out = {name: f"{100.0 * getattr(self, name):.2f}%" for name in PROBABILITY_FIELDS}
        out.update({
            "pi_max": f"{self.pi_max:.4f}",
            "pi_min": f"{self.pi_min:.4f}",
            "pi_std": f"{self.pi_std:.4f}",
        })
        return out
