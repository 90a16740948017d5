"""
实验登记服务
用于将每次运行的状态、逐 epoch 记录与最终报告保存到登记库
登记库写入失败只记日志，不会中断实验
"""
import math
from typing import Any, Dict, Optional

from config.experiment import ExperimentConfig, dump_config
from config.settings import Settings
from models.epoch_log import EpochLog
from models.experiment_run import ExperimentRun
from services.generator_trainer import EpochRecord
from services.robustness.types import RobustnessReport
from utils.logger import logger


def _finite(value: float) -> float:
    return float(value) if math.isfinite(value) else -1.0


class RunLogService:
    """实验登记服务"""

    def __init__(self, settings: Settings):
        self.settings = settings

    def start_run(self, cfg: ExperimentConfig, command: str, output_dir: str) -> Optional[str]:
        """登记一次新运行

        Args:
            cfg: 实验配置（以 YAML 原文保存）
            command: 触发运行的子命令，如 'train'
            output_dir: 产物目录

        Returns:
            运行 ID，登记失败则返回 None
        """
        try:
            run = ExperimentRun(
                name=cfg.name,
                command=command,
                output_dir=str(output_dir),
                mode=cfg.gmm.mode.value,
                mixture_count=cfg.gmm.modes,
                gamma=cfg.gamma,
                seed=cfg.seed,
                config_yaml=dump_config(cfg),
            )
            run_id = run.id
            with self.settings.get_session() as session:
                session.add(run)
            logger.info(f"📋 运行已登记: {cfg.name} ({command}) id={run_id}")
            return run_id
        except Exception as e:
            logger.error(f"❌ 登记运行失败: {e}", exc_info=True)
            return None

    def record_epoch(self, run_id: Optional[str], record: EpochRecord) -> bool:
        """保存单个 epoch 记录；NaN 损失存为 -1"""
        if run_id is None:
            return False
        try:
            with self.settings.get_session() as session:
                session.add(EpochLog(
                    run_id=run_id,
                    epoch=record.epoch,
                    train_loss=_finite(record.train_loss),
                    nppr_running=_finite(record.nppr_running),
                    entropy_ratio=record.entropy_ratio,
                    pi_max=record.pi_max,
                    pi_min=record.pi_min,
                    pi_std=record.pi_std,
                    tau_gumbel=record.tau_gumbel,
                    t_pi=record.t_pi,
                    t_mu=record.t_mu,
                    t_sigma=record.t_sigma,
                    status=record.status,
                ))
            return True
        except Exception as e:
            logger.warning(f"⚠️ 保存 epoch {record.epoch} 记录失败: {e}")
            return False

    def finish_run(
        self,
        run_id: Optional[str],
        status: str,
        failed_stage: Optional[str] = None,
        error: Optional[str] = None,
        report: Optional[RobustnessReport] = None,
    ) -> bool:
        """更新运行状态（'completed' / 'failed'）与主要指标"""
        if run_id is None:
            return False
        try:
            with self.settings.get_session() as session:
                run = session.get(ExperimentRun, run_id)
                if run is None:
                    logger.warning(f"⚠️ 登记库中找不到运行 {run_id}")
                    return False
                run.status = status
                run.failed_stage = failed_stage
                run.error = error
                run.touch()
                if report is not None:
                    run.nppr_test = report.nppr_test
                    run.pr_uniform = report.pr_uniform
                    run.ar_pgd = report.ar_pgd
                    run.report = report.to_dict()
                session.add(run)
            logger.info(f"✅ 运行状态已更新: {run_id} → {status}")
            return True
        except Exception as e:
            logger.error(f"❌ 更新运行状态失败: {e}", exc_info=True)
            return False

    def get_run(self, run_id: str) -> Optional[Dict[str, Any]]:
        try:
            with self.settings.get_session() as session:
                run = session.get(ExperimentRun, run_id)
                return run.model_dump() if run else None
        except Exception as e:
            logger.warning(f"⚠️ 读取运行 {run_id} 失败: {e}")
            return None
