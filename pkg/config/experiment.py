"""
实验配置 - YAML 文档 → 经过校验的 ExperimentConfig

严格模式下未知键直接拒绝；宽松模式（--no-strict）丢弃未知键并告警。
所有校验失败统一抛出 ConfigError，消息带点分键路径（如 gmm.modes）。
"""
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Type, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from services.data.datasets import DatasetSpec
from services.generator_trainer import TrainConfig
from services.networks.heads import DependencyMode, HeadConfig
from services.perturbation.anneal import AnnealSchedule, GumbelConfig
from services.perturbation.upsample import UpsamplerConfig
from services.robustness.report import EvaluationSettings
from utils.errors import ConfigError
from utils.logger import logger


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class DatasetSection(Section):
    kind: Literal["blobs", "rings", "grid_image"]
    dim: int = Field(default=16, ge=1)
    image_shape: Optional[Tuple[int, int, int]] = None
    classes: int = Field(default=10, ge=2)
    n_train: int = Field(default=800, ge=1)
    n_test: int = Field(default=200, ge=1)
    separation: float = Field(default=4.0, gt=0)
    noise: float = Field(default=1.0, gt=0)
    seed: Optional[int] = None  # 为空时取顶层 seed
    path: Optional[str] = None  # 给出时从 CSV 读取，不再生成

    @model_validator(mode="after")
    def _check_kind(self):
        if self.kind == "grid_image" and self.image_shape is None:
            raise ValueError("grid_image needs image_shape (c, h, w)")
        if self.kind == "rings" and self.dim != 2:
            raise ValueError("rings is a 2-D dataset, dim must be 2")
        return self


class ClassifierSection(Section):
    hidden: List[int] = Field(default_factory=lambda: [32, 32])
    epochs: int = Field(default=200, ge=1)
    lr: float = Field(default=1e-2, gt=0)
    batch_size: int = Field(default=128, ge=1)
    accuracy_threshold: float = Field(default=0.9, ge=0, le=1)


class GmmSection(Section):
    mode: DependencyMode = DependencyMode.INDEPENDENT
    modes: int = Field(default=7, ge=1)  # 混合分量数 K
    latent_dim: int = Field(default=8, ge=1)
    hidden_dim: int = Field(default=64, ge=1)
    label_emb_dim: int = Field(default=16, ge=1)
    label_emb_norm: bool = True
    full_label_conditioning: bool = False


class UpsamplerSection(Section):
    kind: Literal["linear_vector", "bicubic_image", "none"] = "linear_vector"
    learnable: bool = True
    latent_grid: Optional[Tuple[int, int, int]] = None

    @model_validator(mode="after")
    def _check_grid(self):
        if self.kind == "bicubic_image" and self.latent_grid is None:
            raise ValueError("bicubic_image needs latent_grid (c, h', w')")
        return self


def parse_fraction(value: Union[str, int, float]) -> Fraction:
    """'16/255' / '0.0625' / 0.0625 → 精确有理数"""
    try:
        return Fraction(str(value).strip())
    except (ValueError, ZeroDivisionError) as e:
        raise ValueError(f"'{value}' is not a rational number") from e


class BudgetSection(Section):
    norm: Literal["linf"] = "linf"
    epsilon: str = "16/255"

    @field_validator("epsilon", mode="before")
    @classmethod
    def _check_epsilon(cls, value: Any) -> str:
        if isinstance(value, bool):
            raise ValueError("epsilon must be a positive rational")
        if parse_fraction(value) <= 0:
            raise ValueError("epsilon must be > 0")
        return str(value).strip()

    @property
    def radius(self) -> Fraction:
        return parse_fraction(self.epsilon)

    @property
    def gamma(self) -> float:
        return float(self.radius)


class TrainingSection(Section):
    epochs: int = Field(default=50, ge=1)
    lr: Optional[float] = Field(default=None, gt=0)
    lr_schedule: Optional[Literal["constant", "cosine"]] = None
    warmup_epochs: int = Field(default=20, ge=0)
    lr_min: float = Field(default=2e-6, ge=0)
    cycle_epochs: Optional[int] = Field(default=None, ge=1)
    samples_per_input: int = Field(default=32, ge=1)  # M
    batch_size: int = Field(default=64, ge=1)
    eval_every: int = Field(default=5, ge=1)
    kappa: float = Field(default=1.0, ge=0)
    probe_size: int = Field(default=64, ge=1)
    probe_samples: int = Field(default=32, ge=1)
    m_chunk: Optional[int] = Field(default=None, ge=1)
    divergence_factor: float = Field(default=10.0, gt=1)
    divergence_patience: int = Field(default=5, ge=1)


class GumbelSection(Section):
    tau_init: float = Field(default=1.0, gt=0)
    tau_final: float = Field(default=0.1, gt=0)
    anneal: bool = True

    @model_validator(mode="after")
    def _check_order(self):
        if self.tau_final > self.tau_init:
            raise ValueError("tau_final must not exceed tau_init")
        return self


Pair = Tuple[float, float]


class AnnealingSection(Section):
    t_pi: Pair = (3.0, 1.0)
    t_mu: Pair = (3.0, 1.0)
    t_sigma: Pair = (1.5, 1.0)
    t_shared: Pair = (1.5, 1.0)
    warmup_epochs: int = Field(default=0, ge=0)

    @field_validator("t_pi", "t_mu", "t_sigma", "t_shared")
    @classmethod
    def _positive(cls, value: Pair) -> Pair:
        if min(value) <= 0:
            raise ValueError("temperatures must be positive")
        return value


class EvaluationSection(Section):
    samples_per_input: int = Field(default=500, ge=1)
    pr_samples_per_input: int = Field(default=500, ge=1)
    pgd_steps: int = Field(default=20, ge=1)
    cw_steps: int = Field(default=20, ge=1)
    gaussian_sigma_rule: float = Field(default=1.0 / 3.0, gt=0)
    export_samples: int = Field(default=0, ge=0)  # 每个输入导出的扰动样本数，0 为不导出
    oracle_points_per_dim: int = Field(default=21, ge=3)

    @field_validator("oracle_points_per_dim")
    @classmethod
    def _odd(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError("oracle_points_per_dim must be odd")
        return value


class SweepSection(Section):
    modes: List[DependencyMode] = Field(default_factory=list)
    mixture_counts: List[int] = Field(default_factory=list)
    epsilons: List[str] = Field(default_factory=list)
    replicates: int = Field(default=1, ge=1)
    workers: int = Field(default=1, ge=1)

    @field_validator("mixture_counts")
    @classmethod
    def _check_counts(cls, value: List[int]) -> List[int]:
        if any(k < 1 for k in value):
            raise ValueError("mixture counts must be >= 1")
        return value

    @field_validator("epsilons", mode="before")
    @classmethod
    def _check_epsilons(cls, value: Any) -> List[str]:
        if not isinstance(value, list):
            raise ValueError("epsilons must be a list")
        for item in value:
            if parse_fraction(item) <= 0:
                raise ValueError(f"epsilon {item} must be > 0")
        return [str(item).strip() for item in value]


class ExperimentConfig(Section):
    name: str = "nppr"
    seed: int = 0
    output_dir: Optional[str] = None
    dataset: DatasetSection
    classifier: ClassifierSection = Field(default_factory=ClassifierSection)
    gmm: GmmSection = Field(default_factory=GmmSection)
    upsampler: UpsamplerSection = Field(default_factory=UpsamplerSection)
    budget: BudgetSection = Field(default_factory=BudgetSection)
    training: TrainingSection = Field(default_factory=TrainingSection)
    gumbel: GumbelSection = Field(default_factory=GumbelSection)
    annealing: AnnealingSection = Field(default_factory=AnnealingSection)
    evaluation: EvaluationSection = Field(default_factory=EvaluationSection)
    sweep: SweepSection = Field(default_factory=SweepSection)

    @model_validator(mode="after")
    def _check_shapes(self):
        if self.upsampler.kind == "bicubic_image":
            if self.dataset.kind != "grid_image":
                raise ValueError("bicubic_image up-sampling needs an image dataset")
            if self.upsampler.latent_grid[0] != self.dataset.image_shape[0]:
                raise ValueError("upsampler.latent_grid must have the dataset's channel count")
            if self.gmm.latent_dim != int(np.prod(self.upsampler.latent_grid)):
                raise ValueError("gmm.latent_dim must equal the size of upsampler.latent_grid")
        if self.upsampler.kind == "none" and self.gmm.latent_dim != self._input_dim():
            raise ValueError("upsampler kind 'none' needs gmm.latent_dim equal to the input dimension")
        return self

    def _input_dim(self) -> int:
        if self.dataset.kind == "grid_image":
            return int(np.prod(self.dataset.image_shape))
        return self.dataset.dim

    @property
    def gamma(self) -> float:
        return self.budget.gamma

    # ============ 转换为各模块的运行时配置 ============

    def dataset_spec(self) -> DatasetSpec:
        ds = self.dataset
        return DatasetSpec(
            kind=ds.kind,
            dim=ds.dim,
            image_shape=ds.image_shape,
            classes=ds.classes,
            n_train=ds.n_train,
            n_test=ds.n_test,
            separation=ds.separation,
            noise=ds.noise,
            seed=self.seed if ds.seed is None else ds.seed,
        )

    def head_config(self) -> HeadConfig:
        gmm = self.gmm
        return HeadConfig(
            mode=gmm.mode,
            K=gmm.modes,
            latent_dim=gmm.latent_dim,
            hidden_dim=gmm.hidden_dim,
            label_emb_dim=gmm.label_emb_dim,
            label_emb_normalized=gmm.label_emb_norm,
            full_label_conditioning=gmm.full_label_conditioning,
        )

    def upsampler_config(self) -> UpsamplerConfig:
        return UpsamplerConfig(
            mode=self.upsampler.kind,
            learnable_premap=self.upsampler.learnable,
            latent_grid=self.upsampler.latent_grid,
            gamma=self.gamma,
            target_shape=self.dataset.image_shape if self.upsampler.kind == "bicubic_image" else None,
        )

    def gumbel_config(self) -> GumbelConfig:
        return GumbelConfig(tau_init=self.gumbel.tau_init, tau_final=self.gumbel.tau_final, anneal=self.gumbel.anneal)

    def anneal_schedule(self) -> AnnealSchedule:
        a = self.annealing
        return AnnealSchedule(
            t_pi=a.t_pi, t_mu=a.t_mu, t_sigma=a.t_sigma, t_shared=a.t_shared, warmup_epochs=a.warmup_epochs
        )

    def train_config(self, checkpoint_dir: Optional[Union[str, Path]] = None) -> TrainConfig:
        tr = self.training
        return TrainConfig(
            epochs=tr.epochs,
            lr=tr.lr,
            lr_schedule=tr.lr_schedule,
            warmup_epochs=tr.warmup_epochs,
            lr_min=tr.lr_min,
            cycle_epochs=tr.cycle_epochs,
            M=tr.samples_per_input,
            batch_size=tr.batch_size,
            seed=self.seed,
            mode=self.gmm.mode,
            gumbel=self.gumbel_config(),
            anneal=self.anneal_schedule(),
            eval_every=tr.eval_every,
            kappa=tr.kappa,
            probe_size=tr.probe_size,
            probe_samples=tr.probe_samples,
            m_chunk=tr.m_chunk,
            divergence_factor=tr.divergence_factor,
            divergence_patience=tr.divergence_patience,
            checkpoint_dir=Path(checkpoint_dir) if checkpoint_dir is not None else None,
        )

    def evaluation_settings(self) -> EvaluationSettings:
        ev = self.evaluation
        return EvaluationSettings(
            samples_per_input=ev.samples_per_input,
            pr_samples_per_input=ev.pr_samples_per_input,
            pgd_steps=ev.pgd_steps,
            cw_steps=ev.cw_steps,
            gaussian_sigma_rule=ev.gaussian_sigma_rule,
            kappa=self.training.kappa,
        )

    def variant(self, **updates: Any) -> "ExperimentConfig":
        """
        复制并覆盖部分字段，覆盖后重新校验

        Args:
            updates: 点分路径 → 新值，如 {"gmm.modes": 3, "seed": 7}
        """
        data = self.model_dump(mode="json")
        for dotted, value in updates.items():
            node = data
            *parents, leaf = dotted.split(".")
            for part in parents:
                node = node[part]
            node[leaf] = value.value if isinstance(value, DependencyMode) else value
        return validate_config(data)


# ============ 解析 / 序列化 ============

def _section_type(annotation: Any) -> Optional[Type[BaseModel]]:
    if isinstance(annotation, type) and issubclass(annotation, BaseModel):
        return annotation
    return None


def _drop_unknown(data: Dict[str, Any], model: Type[BaseModel], prefix: str = "") -> Dict[str, Any]:
    """宽松模式：递归删除 schema 之外的键"""
    cleaned = {}
    for key, value in data.items():
        path = f"{prefix}{key}"
        field = model.model_fields.get(key)
        if field is None:
            logger.warning(f"⚠️ 忽略未知配置键: {path}")
            continue
        nested = _section_type(field.annotation)
        if nested is not None and isinstance(value, dict):
            value = _drop_unknown(value, nested, prefix=f"{path}.")
        cleaned[key] = value
    return cleaned


def _key_path(loc: Tuple[Any, ...]) -> str:
    return ".".join(str(part) for part in loc) or "<root>"


def validate_config(data: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(first["msg"], key_path=_key_path(first["loc"])) from e


def parse_config(text: str, strict: bool = True) -> ExperimentConfig:
    """
    解析 YAML 实验配置

    Args:
        text: YAML 文档
        strict: True 时未知键报错；False 时丢弃并告警

    Returns:
        应用默认值并通过校验的 ExperimentConfig
    """
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"malformed YAML: {e}") from e
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level of the config must be a mapping")
    if not strict:
        data = _drop_unknown(data, ExperimentConfig)
    return validate_config(data)


def load_config(path: Union[str, Path], strict: bool = True) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), strict=strict)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False, allow_unicode=True)
