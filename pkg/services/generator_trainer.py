"""
生成器训练 - 在冻结分类器上最小化经验 softplus 间隔损失

每个 epoch：
1. 按 (seed, epoch) 洗牌，逐批为每个输入抽 M 个松弛扰动
2. 经过冻结分类器计算间隔损失，反向传播到 头 / GMM / 上采样 参数，Adam 更新
3. 推进 τ / T_π / T_μ / T_σ / T_shared 退火
4. 在固定 probe 子集上用精确采样计算 running NPPR，记录混合权重统计
"""
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from services.data.datasets import LabeledDataset
from services.networks.classifier import MLPClassifier
from services.networks.heads import DependencyMode, HeadConfig, HeadTemperatures
from services.perturbation.anneal import AnnealSchedule, GumbelConfig, anneal_value, temperatures
from services.perturbation.generator import PerturbationGenerator
from services.perturbation.gmm_sampler import SamplerNoise
from services.perturbation.rng import StreamPurpose, input_streams, substream
from services.perturbation.upsample import UpsamplerConfig
from services.robustness.entropy import mixture_statistics
from services.robustness.estimators import nppr_estimate
from services.robustness.margin import margin_loss
from services.tensor.optim import DEFAULT_LR, Adam, LearningRateSchedule
from services.tensor.snapshot import load_snapshot, save_snapshot
from services.tensor.tensor import add, reshape, scale
from utils.errors import CheckpointError
from utils.logger import logger

CHECKPOINT_KIND = "generator_checkpoint"
LATEST_CHECKPOINT = "generator.ckpt.json"
BEST_CHECKPOINT = "generator.best.json"

INDEPENDENT_FIXED_LR = 2e-2

EPOCH_COLUMNS = [
    "epoch",
    "train_loss",
    "nppr_running",
    "entropy_ratio",
    "pi_max",
    "pi_min",
    "pi_std",
    "tau_gumbel",
    "T_pi",
    "T_mu",
    "T_sigma",
]


@dataclass
class TrainConfig:
    epochs: int = 50
    lr: Optional[float] = None
    lr_schedule: Optional[str] = None  # 'constant' | 'cosine'；为空时按模式取默认
    warmup_epochs: int = 20
    lr_min: float = 2e-6
    cycle_epochs: Optional[int] = None
    M: int = 32
    batch_size: int = 64
    seed: int = 0
    mode: DependencyMode = DependencyMode.INDEPENDENT
    gumbel: GumbelConfig = field(default_factory=GumbelConfig)
    anneal: AnnealSchedule = field(default_factory=AnnealSchedule)
    eval_every: int = 5
    kappa: float = 1.0
    probe_size: int = 64
    probe_samples: int = 32
    m_chunk: Optional[int] = None
    divergence_factor: float = 10.0
    divergence_patience: int = 5
    checkpoint_dir: Optional[Path] = None

    def __post_init__(self):
        self.mode = DependencyMode(self.mode)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.lr is not None and self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("batch_size and eval_every must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    nppr_running: float
    entropy_ratio: float
    pi_max: float
    pi_min: float
    pi_std: float
    tau_gumbel: float
    t_pi: float
    t_mu: float
    t_sigma: float
    lr: float = 0.0
    status: str = "ok"  # 'ok' | 'nan_abort'

    def to_row(self) -> Dict[str, float]:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "nppr_running": self.nppr_running,
            "entropy_ratio": self.entropy_ratio,
            "pi_max": self.pi_max,
            "pi_min": self.pi_min,
            "pi_std": self.pi_std,
            "tau_gumbel": self.tau_gumbel,
            "T_pi": self.t_pi,
            "T_mu": self.t_mu,
            "T_sigma": self.t_sigma,
        }


@dataclass
class TrainingOutcome:
    generator: PerturbationGenerator
    records: List[EpochRecord]
    nppr_train: float
    nppr_test: Optional[float]
    diverged: bool
    aborted_epochs: List[int]


@dataclass
class TrainerCheckpoint:
    generator: PerturbationGenerator
    next_epoch: int
    extra: Dict[str, Any]


def _encode_record(record: EpochRecord) -> Dict[str, Any]:
    """JSON 不允许 NaN：中止的 epoch 的损失记为 None"""
    payload = asdict(record)
    if not math.isfinite(payload["train_loss"]):
        payload["train_loss"] = None
    return payload


def _decode_record(payload: Dict[str, Any]) -> EpochRecord:
    payload = dict(payload)
    if payload.get("train_loss") is None:
        payload["train_loss"] = float("nan")
    return EpochRecord(**payload)


def resolve_lr_schedule(cfg: TrainConfig, upsampler_trainable: bool) -> LearningRateSchedule:
    """
    独立模式 + 固定上采样器：2e-2 余弦（20 epoch 预热）；其余：5e-4 常数
    cfg 中显式给出的 lr / lr_schedule 覆盖默认值
    """
    if cfg.mode is DependencyMode.INDEPENDENT and not upsampler_trainable:
        default_lr, default_kind = INDEPENDENT_FIXED_LR, "cosine"
    else:
        default_lr, default_kind = DEFAULT_LR, "constant"
    kind = cfg.lr_schedule or default_kind
    return LearningRateSchedule(
        kind=kind,
        base_lr=cfg.lr if cfg.lr is not None else default_lr,
        total_epochs=cfg.epochs,
        warmup_epochs=min(cfg.warmup_epochs, cfg.epochs) if kind == "cosine" else 0,
        lr_min=cfg.lr_min,
        cycle_epochs=cfg.cycle_epochs,
    )


def build_generator(
    clf: MLPClassifier,
    dataset: LabeledDataset,
    head_cfg: HeadConfig,
    upsampler_cfg: UpsamplerConfig,
    anneal: Optional[AnnealSchedule] = None,
    seed: int = 0,
) -> PerturbationGenerator:
    """按分类器 / 数据集补全维度信息后构造生成器"""
    if upsampler_cfg.target_shape is None:
        target = dataset.image_shape if upsampler_cfg.mode == "bicubic_image" else (dataset.input_dim,)
        upsampler_cfg = replace(upsampler_cfg, target_shape=tuple(target) if target else None)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 202]))
    return PerturbationGenerator(
        head_cfg,
        upsampler_cfg,
        feature_dim=clf.hook.feature_dim,
        num_classes=clf.num_classes,
        rng=rng,
        anneal=anneal,
    )


def probe_subset(dataset: LabeledDataset, size: int, seed: int) -> LabeledDataset:
    """固定的 running-NPPR probe 子集"""
    if size >= len(dataset):
        return dataset
    rng = substream(seed, StreamPurpose.PROBE, 0, 0)
    return dataset.subset(np.sort(rng.choice(len(dataset), size=size, replace=False)))


def batch_bounds(n: int, batch_size: int) -> List[Tuple[int, int]]:
    """minibatch 的 [start, stop) 区间；末尾只剩 1 个样本时并入前一个 batch"""
    bounds = [(start, min(start + batch_size, n)) for start in range(0, n, batch_size)]
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] == 1:
        bounds[-2] = (bounds[-2][0], n)
        bounds.pop()
    return bounds


def _batch_loss(
    generator: PerturbationGenerator,
    clf: MLPClassifier,
    x: np.ndarray,
    y: np.ndarray,
    noise: SamplerNoise,
    tau: float,
    temps: HeadTemperatures,
    kappa: float,
    m_chunk: int,
) -> float:
    """前向 + 反向（沿 M 轴分块累加梯度），返回该批平均损失"""
    B, M = noise.batch, noise.samples
    d = x.shape[1]
    total = 0.0
    for start in range(0, M, m_chunk):
        stop = min(start + m_chunk, M)
        params = generator.gmm_params(clf, x, y, temps=temps)
        _, delta = generator.sample_relaxed(params, stop - start, tau, noise=noise.slice_samples(start, stop))
        perturbed = reshape(add(x[:, None, :], delta), (B * (stop - start), d))
        loss = scale(margin_loss(clf(perturbed), y, kappa), (stop - start) / M)
        loss.backward()
        total += loss.item()
    return total


def train_generator(
    clf: MLPClassifier,
    generator: PerturbationGenerator,
    dataset: LabeledDataset,
    cfg: TrainConfig,
    test: Optional[LabeledDataset] = None,
    resume_from: Optional[Union[str, Path]] = None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> TrainingOutcome:
    """
    训练扰动生成器

    Args:
        clf: 冻结的分类器
        generator: 待训练的生成器（原地更新）
        dataset: 训练集
        cfg: 训练配置
        test: 测试集，给出时在结束后计算 nppr_test
        resume_from: checkpoint 路径，从中恢复参数、Adam 状态与历史记录后继续
        on_epoch: 每个 epoch 结束后的回调（写入运行记录库等）

    Returns:
        TrainingOutcome
    """
    if not clf.frozen:
        raise ValueError("classifier must be frozen before generator training")
    if generator.mode is not cfg.mode:
        raise ValueError(f"generator mode '{generator.mode.value}' does not match config mode '{cfg.mode.value}'")
    dataset.require_nonempty()

    params = generator.trainable_parameters()
    schedule = resolve_lr_schedule(cfg, upsampler_trainable=bool(generator.upsampler.trainable_parameters()))
    optimizer = Adam(params, lr=schedule.base_lr)
    probe = probe_subset(dataset, cfg.probe_size, cfg.seed)
    m_chunk = cfg.m_chunk or cfg.M
    K, D = generator.head_cfg.K, generator.head_cfg.latent_dim

    records: List[EpochRecord] = []
    aborted: List[int] = []
    start_epoch = 0
    initial_loss: Optional[float] = None
    above_count = 0
    diverged = False
    best_nppr = math.inf

    if resume_from is not None:
        state = restore(resume_from, generator=generator, optimizer=optimizer)
        extra = state.extra
        start_epoch = state.next_epoch
        records = [_decode_record(r) for r in extra.get("records", [])]
        aborted = list(extra.get("aborted_epochs", []))
        initial_loss = extra.get("initial_loss")
        above_count = int(extra.get("above_count", 0))
        diverged = bool(extra.get("diverged", False))
        best_nppr = float(extra.get("best_nppr", math.inf))
        logger.info(f"🔄 从 checkpoint 恢复训练: epoch {start_epoch}/{cfg.epochs}")

    logger.info(
        f"🚀 开始训练生成器: mode={cfg.mode.value}, K={K}, epochs={cfg.epochs}, M={cfg.M}, "
        f"lr={schedule.base_lr:g} ({schedule.kind}), 参数 {sum(p.size for p in params)} 个"
    )

    n = len(dataset)
    for epoch in range(start_epoch, cfg.epochs):
        lr = schedule.value(epoch)
        tau = anneal_value(cfg.gumbel, epoch, cfg.epochs)
        temps = temperatures(cfg.anneal, epoch, cfg.epochs)
        generator.eval_temps = temps
        last_good = (generator.state_dict(), optimizer.state_dict())

        order = substream(cfg.seed, StreamPurpose.SHUFFLE, epoch, 0).permutation(n)
        epoch_loss = 0.0
        status = "ok"
        for start, stop in batch_bounds(n, cfg.batch_size):
            idx = order[start:stop]
            noise = SamplerNoise.draw(input_streams(cfg.seed, StreamPurpose.TRAIN, epoch, dataset.ids[idx]), len(idx), cfg.M, K, D)
            optimizer.zero_grad()
            batch_loss = _batch_loss(generator, clf, dataset.x[idx], dataset.y[idx], noise, tau, temps, cfg.kappa, m_chunk)
            if not math.isfinite(batch_loss):
                status = "nan_abort"
                break
            optimizer.step(lr)
            epoch_loss += batch_loss * len(idx)

        if status == "nan_abort":
            generator.load_state_dict(last_good[0])
            optimizer.load_state_dict(last_good[1])
            optimizer.zero_grad()
            aborted.append(epoch)
            train_loss = float("nan")
            logger.error(f"❌ epoch {epoch} 出现 NaN 损失，已中止该 epoch 并恢复到 epoch 开始时的参数")
        else:
            train_loss = epoch_loss / n
            if initial_loss is None:
                initial_loss = train_loss
            elif train_loss > cfg.divergence_factor * initial_loss:
                above_count += 1
                if above_count >= cfg.divergence_patience and not diverged:
                    diverged = True
                    logger.warning(
                        f"⚠️ 训练发散: 损失连续 {above_count} 个 epoch 超过初始值的 {cfg.divergence_factor:g} 倍"
                    )
            else:
                above_count = 0

        nppr_running = nppr_estimate(clf, generator, probe, cfg.probe_samples, seed=cfg.seed,
                                     purpose=StreamPurpose.PROBE, epoch=epoch)
        stats = mixture_statistics(generator.mixture_weights(clf, probe.x, probe.y))
        record = EpochRecord(
            epoch=epoch,
            train_loss=train_loss,
            nppr_running=nppr_running,
            entropy_ratio=stats.entropy_ratio,
            pi_max=stats.pi_max,
            pi_min=stats.pi_min,
            pi_std=stats.pi_std,
            tau_gumbel=tau,
            t_pi=temps.pi,
            t_mu=temps.mu,
            t_sigma=temps.sigma,
            lr=lr,
            status=status,
        )
        records.append(record)
        logger.info(
            f"📋 epoch {epoch + 1}/{cfg.epochs}: loss={train_loss:.6f}, nppr_running={nppr_running:.4f}, "
            f"ER={stats.entropy_ratio:.4f}, τ={tau:.3f}, lr={lr:.2e}"
        )
        if on_epoch is not None:
            on_epoch(record)

        if cfg.checkpoint_dir is not None:
            extra = {
                "records": [_encode_record(r) for r in records],
                "aborted_epochs": aborted,
                "initial_loss": initial_loss,
                "above_count": above_count,
                "diverged": diverged,
                "best_nppr": min(best_nppr, nppr_running),
            }
            if nppr_running < best_nppr:
                checkpoint(generator, Path(cfg.checkpoint_dir) / BEST_CHECKPOINT, optimizer, epoch + 1, extra)
            if (epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs:
                checkpoint(generator, Path(cfg.checkpoint_dir) / LATEST_CHECKPOINT, optimizer, epoch + 1, extra)
        best_nppr = min(best_nppr, nppr_running)

    nppr_train = nppr_estimate(clf, generator, dataset, cfg.M, seed=cfg.seed)
    nppr_test = nppr_estimate(clf, generator, test, cfg.M, seed=cfg.seed) if test is not None else None
    logger.info(
        f"✅ 生成器训练完成: NPPR(train)={nppr_train:.4f}"
        + (f", NPPR(test)={nppr_test:.4f}" if nppr_test is not None else "")
    )
    return TrainingOutcome(
        generator=generator,
        records=records,
        nppr_train=nppr_train,
        nppr_test=nppr_test,
        diverged=diverged,
        aborted_epochs=aborted,
    )


# ============ checkpoint ============

def _generator_meta(generator: PerturbationGenerator) -> Dict[str, Any]:
    head, up = generator.head_cfg, generator.upsampler_cfg
    return {
        "mode": head.mode.value,
        "K": head.K,
        "latent_dim": head.latent_dim,
        "hidden_dim": head.hidden_dim,
        "label_emb_dim": head.label_emb_dim,
        "label_emb_normalized": head.label_emb_normalized,
        "full_label_conditioning": head.full_label_conditioning,
        "feature_dim": generator.feature_dim,
        "num_classes": generator.num_classes,
        "upsampler": {
            "mode": up.mode,
            "learnable_premap": up.learnable_premap,
            "latent_grid": list(up.latent_grid) if up.latent_grid else None,
            "gamma": float(up.gamma),
            "target_shape": list(up.target_shape) if up.target_shape else None,
        },
        "eval_temps": asdict(generator.eval_temps),
    }


def checkpoint(
    generator: PerturbationGenerator,
    path: Union[str, Path],
    optimizer: Optional[Adam] = None,
    next_epoch: int = 0,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """写生成器 checkpoint（参数 + Adam 状态 + 调度位置 + 评估温度）"""
    tensors = {f"generator.{name}": value for name, value in generator.state_dict().items()}
    if optimizer is not None:
        tensors.update({f"adam.{name}": value for name, value in optimizer.state_dict().items()})
    meta = _generator_meta(generator)
    meta["next_epoch"] = int(next_epoch)
    meta["extra"] = extra or {}
    return save_snapshot(path, tensors, kind=CHECKPOINT_KIND, meta=meta)


def _split(tensors: Dict[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    return {name[len(prefix):]: value for name, value in tensors.items() if name.startswith(prefix)}


def restore(
    path: Union[str, Path],
    generator: Optional[PerturbationGenerator] = None,
    optimizer: Optional[Adam] = None,
) -> TrainerCheckpoint:
    """
    读取 checkpoint；generator 为空时按 checkpoint 元数据重建
    依赖模式 / K / latent_dim 与给定 generator 不一致时拒绝
    """
    tensors, meta = load_snapshot(path, expected_kind=CHECKPOINT_KIND)
    try:
        mode = DependencyMode(meta["mode"])
        K, latent_dim = int(meta["K"]), int(meta["latent_dim"])
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"checkpoint {path} has an invalid schema: {e}") from e

    if generator is None:
        up = meta["upsampler"]
        generator = PerturbationGenerator(
            HeadConfig(
                mode=mode,
                K=K,
                latent_dim=latent_dim,
                hidden_dim=int(meta["hidden_dim"]),
                label_emb_dim=int(meta["label_emb_dim"]),
                label_emb_normalized=bool(meta["label_emb_normalized"]),
                full_label_conditioning=bool(meta["full_label_conditioning"]),
            ),
            UpsamplerConfig(
                mode=up["mode"],
                learnable_premap=bool(up["learnable_premap"]),
                latent_grid=tuple(up["latent_grid"]) if up["latent_grid"] else None,
                gamma=float(up["gamma"]),
                target_shape=tuple(up["target_shape"]) if up["target_shape"] else None,
            ),
            feature_dim=meta.get("feature_dim"),
            num_classes=meta.get("num_classes"),
        )
    elif (generator.mode, generator.head_cfg.K, generator.head_cfg.latent_dim) != (mode, K, latent_dim):
        raise CheckpointError(
            f"checkpoint {path} was written for mode='{mode.value}', K={K}, latent_dim={latent_dim}; "
            f"generator is mode='{generator.mode.value}', K={generator.head_cfg.K}, "
            f"latent_dim={generator.head_cfg.latent_dim}"
        )

    try:
        generator.load_state_dict(_split(tensors, "generator."))
        if optimizer is not None:
            optimizer.load_state_dict(_split(tensors, "adam."))
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"checkpoint {path} does not match the generator: {e}") from e
    generator.eval_temps = HeadTemperatures(**meta["eval_temps"])
    return TrainerCheckpoint(generator=generator, next_epoch=int(meta.get("next_epoch", 0)), extra=meta.get("extra", {}))


def write_epoch_csv(records: List[EpochRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([r.to_row() for r in records], columns=EPOCH_COLUMNS)
    frame.to_csv(path, index=False, float_format="%.10g")
    return path


def read_epoch_csv(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path)
