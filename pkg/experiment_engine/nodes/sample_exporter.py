from experiment_engine.artifacts import SAMPLES_CSV
from experiment_engine.nodes.stage import PipelineStage
from experiment_engine.state import ExperimentState
from services.perturbation.export import export_samples
from utils.logger import logger

DEFAULT_EXPORT_SAMPLES = 16


class SampleExporter(PipelineStage):
    """导出测试集上的扰动样本；train / evaluate 中仅在 evaluation.export_samples > 0 时执行"""

    name = "sample_exporter"

    def execute(self, state: ExperimentState) -> ExperimentState:
        cfg = state["config"]
        M = cfg.evaluation.export_samples
        if M == 0:
            if state.get("command") != "export-samples":
                logger.debug("evaluation.export_samples = 0，跳过样本导出")
                return state
            M = DEFAULT_EXPORT_SAMPLES
        export_samples(
            state["classifier"],
            state["generator"],
            state["test"],
            M,
            self.run_path(state, SAMPLES_CSV),
            seed=cfg.seed,
        )
        self.add_artifact(state, "samples", SAMPLES_CSV)
        return state
