from typing import TYPE_CHECKING, Callable, Dict, List, Optional

from langgraph.graph import END, START, StateGraph

from experiment_engine.nodes.artifact_loader import ArtifactLoader
from experiment_engine.nodes.artifact_writer import ArtifactWriter
from experiment_engine.nodes.classifier_trainer import ClassifierTrainer
from experiment_engine.nodes.dataset_builder import DatasetBuilder
from experiment_engine.nodes.evaluator import Evaluator
from experiment_engine.nodes.generator_fitter import GeneratorFitter
from experiment_engine.nodes.sample_exporter import SampleExporter
from experiment_engine.nodes.verifier import Verifier
from experiment_engine.state import ExperimentState

if TYPE_CHECKING:
    from services.run_log_service import RunLogService

WRITER = ArtifactWriter.name

# 每个子命令依次经过的阶段；任一阶段失败后直接跳到 artifact_writer
STAGE_PLANS: Dict[str, List[str]] = {
    "train": [
        DatasetBuilder.name,
        ClassifierTrainer.name,
        GeneratorFitter.name,
        Evaluator.name,
        SampleExporter.name,
        Verifier.name,
    ],
    "evaluate": [ArtifactLoader.name, Evaluator.name, SampleExporter.name, Verifier.name],
    "export-samples": [ArtifactLoader.name, SampleExporter.name],
}


def next_stage(state: ExperimentState, current: Optional[str]) -> str:
    """current 为 None 时返回计划中的第一个阶段"""
    if state.get("failed_stage"):
        return WRITER
    plan = STAGE_PLANS[state["command"]]
    index = 0 if current is None else plan.index(current) + 1
    return plan[index] if index < len(plan) else WRITER


class GraphBuilder:
    def __init__(self, run_log: Optional['RunLogService'] = None):
        """
        初始化图构建器

        Args:
            run_log: 实验登记服务，为空时不写登记库
        """
        self.graph = StateGraph(ExperimentState)
        self.stages = [
            DatasetBuilder(run_log),
            ClassifierTrainer(run_log),
            GeneratorFitter(run_log),
            ArtifactLoader(run_log),
            Evaluator(run_log),
            SampleExporter(run_log),
            Verifier(run_log),
        ]
        self.artifact_writer = ArtifactWriter(run_log)

    @staticmethod
    def _router(current: Optional[str]) -> Callable[[ExperimentState], str]:
        def route(state: ExperimentState) -> str:
            return next_stage(state, current)
        return route

    def build_graph(self):
        """构建实验流水线：START → 按子命令路由的阶段链 → artifact_writer → END"""
        targets = [stage.name for stage in self.stages] + [WRITER]
        for stage in self.stages:
            self.graph.add_node(stage.name, stage.run)
        self.graph.add_node(WRITER, self.artifact_writer.run)

        self.graph.add_conditional_edges(START, self._router(None), targets)
        for stage in self.stages:
            self.graph.add_conditional_edges(stage.name, self._router(stage.name), targets)
        self.graph.add_edge(WRITER, END)
        return self.graph.compile()
