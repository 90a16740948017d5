"""
温度退火：Gumbel 温度 τ 与头温度 T_π / T_μ / T_σ / T_shared
线性插值，窗口为 warmup_epochs（为 0 时覆盖整个训练），窗口之后保持终值
"""
from dataclasses import dataclass
from typing import Optional, Tuple, Union

from services.networks.heads import HeadTemperatures

Pair = Tuple[float, float]


@dataclass
class GumbelConfig:
    tau_init: float = 1.0
    tau_final: float = 0.1
    anneal: bool = True
    schedule: str = "linear"
    warmup_epochs: int = 0

    def __post_init__(self):
        if not (self.tau_init >= self.tau_final > 0):
            raise ValueError("gumbel temperatures must satisfy tau_init >= tau_final > 0")
        if self.schedule != "linear":
            raise ValueError(f"unsupported gumbel schedule '{self.schedule}'")


@dataclass
class AnnealSchedule:
    t_pi: Pair = (3.0, 1.0)
    t_mu: Pair = (3.0, 1.0)
    t_sigma: Pair = (1.5, 1.0)
    t_shared: Pair = (1.5, 1.0)
    warmup_epochs: int = 0

    def __post_init__(self):
        for name in ("t_pi", "t_mu", "t_sigma", "t_shared"):
            pair = tuple(float(v) for v in getattr(self, name))
            if len(pair) != 2 or min(pair) <= 0:
                raise ValueError(f"{name} must be a pair of positive temperatures")
            setattr(self, name, pair)

    def initial(self) -> HeadTemperatures:
        return HeadTemperatures(pi=self.t_pi[0], mu=self.t_mu[0], sigma=self.t_sigma[0], shared=self.t_shared[0])

    def final(self) -> HeadTemperatures:
        return HeadTemperatures(pi=self.t_pi[1], mu=self.t_mu[1], sigma=self.t_sigma[1], shared=self.t_shared[1])


def _interpolate(init: float, final: float, epoch: int, window: int) -> float:
    if window <= 0:
        return float(init)
    progress = min(epoch / window, 1.0)
    return float(init + (final - init) * progress)


def anneal_value(
    schedule: Union[AnnealSchedule, GumbelConfig],
    epoch: int,
    total_epochs: int,
    field: Optional[str] = None,
) -> float:
    """
    当前 epoch 的温度

    Args:
        schedule: GumbelConfig（返回 τ）或 AnnealSchedule（需指定 field: t_pi / t_mu / t_sigma / t_shared）
        epoch: 0 <= epoch < total_epochs
        total_epochs: 总训练轮数
        field: AnnealSchedule 的温度名

    Returns:
        线性插值得到的温度
    """
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    window = schedule.warmup_epochs if schedule.warmup_epochs > 0 else total_epochs - 1
    if isinstance(schedule, GumbelConfig):
        if not schedule.anneal:
            return float(schedule.tau_init)
        return _interpolate(schedule.tau_init, schedule.tau_final, epoch, window)
    if field is None:
        raise ValueError("field is required for AnnealSchedule")
    init, final = getattr(schedule, field)
    return _interpolate(init, final, epoch, window)


def temperatures(schedule: AnnealSchedule, epoch: int, total_epochs: int) -> HeadTemperatures:
    return HeadTemperatures(
        pi=anneal_value(schedule, epoch, total_epochs, "t_pi"),
        mu=anneal_value(schedule, epoch, total_epochs, "t_mu"),
        sigma=anneal_value(schedule, epoch, total_epochs, "t_sigma"),
        shared=anneal_value(schedule, epoch, total_epochs, "t_shared"),
    )
