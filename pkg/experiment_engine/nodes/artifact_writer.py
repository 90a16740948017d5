from pathlib import Path
from typing import TYPE_CHECKING, Optional

from config.experiment import dump_config
from experiment_engine.artifacts import CONFIG_FILE, write_manifest
from experiment_engine.state import ExperimentState
from utils.logger import logger

if TYPE_CHECKING:
    from services.run_log_service import RunLogService


class ArtifactWriter:
    """
    流水线终点：无论成功与否都会执行
    写 config.yaml 与 manifest.json（已完成阶段、失败阶段、产物列表），并更新登记库
    """

    name = "artifact_writer"

    def __init__(self, run_log: Optional['RunLogService'] = None):
        self.run_log = run_log

    def run(self, state: ExperimentState) -> ExperimentState:
        cfg = state["config"]
        failed_stage = state.get("failed_stage")
        status = "failed" if failed_stage else "completed"
        verdict = state.get("verdict")

        try:
            run_dir = Path(state["run_dir"])
            run_dir.mkdir(parents=True, exist_ok=True)
            (run_dir / CONFIG_FILE).write_text(dump_config(cfg), encoding="utf-8")
            manifest = {
                "name": cfg.name,
                "command": state.get("command"),
                "run_id": state.get("run_id"),
                "status": status,
                "seed": cfg.seed,
                "mode": cfg.gmm.mode.value,
                "K": cfg.gmm.modes,
                "epsilon": cfg.budget.epsilon,
                "gamma": cfg.gamma,
                "completed_stages": list(state.get("completed_stages", [])),
                "failed_stage": failed_stage,
                "error": state.get("error"),
                "artifacts": {**state.get("artifacts", {}), "config": CONFIG_FILE},
                "verified": verdict.passed if verdict is not None else None,
            }
            write_manifest(run_dir, manifest)
        except Exception as e:
            logger.error(f"❌ 写入 manifest 失败: {e}", exc_info=True)

        if self.run_log is not None:
            self.run_log.finish_run(
                state.get("run_id"),
                status,
                failed_stage=failed_stage,
                error=state.get("error"),
                report=state.get("report"),
            )

        if failed_stage:
            logger.error(f"❌ 运行失败于阶段 {failed_stage}: {state.get('error')}")
        else:
            logger.info(f"✅ 运行完成，产物位于 {state['run_dir']}")
        return state

