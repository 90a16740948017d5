from experiment_engine.artifacts import REPORT_FILE
from experiment_engine.nodes.stage import PipelineStage
from experiment_engine.state import ExperimentState
from services.robustness.report import evaluate_robustness, save_report


class Evaluator(PipelineStage):
    name = "evaluator"

    def execute(self, state: ExperimentState) -> ExperimentState:
        cfg = state["config"]
        report = evaluate_robustness(
            state["classifier"],
            state["generator"],
            state["train"],
            state["test"],
            cfg.evaluation_settings(),
            seed=cfg.seed,
        )
        save_report(report, self.run_path(state, REPORT_FILE))
        self.add_artifact(state, "report", REPORT_FILE)
        state["report"] = report
        return state
