from pathlib import Path
from typing import TYPE_CHECKING, Optional

from experiment_engine.state import ExperimentState
from utils.logger import logger

if TYPE_CHECKING:
    from services.run_log_service import RunLogService


class PipelineStage:
    """流水线阶段基类：捕获异常并记录失败阶段，后续由图路由到产物写入节点"""

    name = "stage"

    def __init__(self, run_log: Optional['RunLogService'] = None):
        self.run_log = run_log

    def run(self, state: ExperimentState) -> ExperimentState:
        logger.info(f"🚀 阶段开始: {self.name}")
        try:
            state = self.execute(state)
        except Exception as e:
            logger.error(f"❌ 阶段 {self.name} 失败: {e}", exc_info=True)
            state["failed_stage"] = self.name
            state["error"] = f"{type(e).__name__}: {e}"
            return state
        state["completed_stages"] = [*state.get("completed_stages", []), self.name]
        logger.info(f"✅ 阶段完成: {self.name}")
        return state

    def execute(self, state: ExperimentState) -> ExperimentState:
        raise NotImplementedError

    @staticmethod
    def run_path(state: ExperimentState, filename: str) -> Path:
        return Path(state["run_dir"]) / filename

    @staticmethod
    def add_artifact(state: ExperimentState, name: str, filename: str) -> None:
        state["artifacts"] = {**state.get("artifacts", {}), name: filename}
