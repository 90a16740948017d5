from experiment_engine.artifacts import VERDICT_FILE
from experiment_engine.nodes.stage import PipelineStage
from experiment_engine.state import ExperimentState
from services.oracle.verifier import save_verdict, verify_propositions


class Verifier(PipelineStage):
    """单次运行内的排序检查（AR ≤ NPPR ≤ PR），低维时附加网格 oracle 下界"""

    name = "verifier"

    def execute(self, state: ExperimentState) -> ExperimentState:
        cfg = state["config"]
        verdict = verify_propositions(
            [state["report"]],
            clf=state["classifier"],
            dataset=state["test"],
            grid_points=cfg.evaluation.oracle_points_per_dim,
        )
        save_verdict(verdict, self.run_path(state, VERDICT_FILE))
        self.add_artifact(state, "verdict", VERDICT_FILE)
        state["verdict"] = verdict
        return state
