from experiment_engine.artifacts import CLASSIFIER_FILE, LATEST_CHECKPOINT, TEST_CSV, TRAIN_CSV
from experiment_engine.nodes.stage import PipelineStage
from experiment_engine.state import ExperimentState
from services.data.datasets import load_dataset_csv
from services.generator_trainer import restore
from services.networks.classifier import load_classifier
from utils.logger import logger


class ArtifactLoader(PipelineStage):
    """evaluate / export-samples：从运行目录读取数据集、分类器和生成器 checkpoint"""

    name = "artifact_loader"

    def execute(self, state: ExperimentState) -> ExperimentState:
        cfg = state["config"]
        for filename in (TRAIN_CSV, TEST_CSV, CLASSIFIER_FILE, LATEST_CHECKPOINT):
            if not self.run_path(state, filename).exists():
                raise FileNotFoundError(f"{self.run_path(state, filename)} not found, run 'train' first")

        shape = cfg.dataset.image_shape
        state["train"] = load_dataset_csv(self.run_path(state, TRAIN_CSV), num_classes=cfg.dataset.classes, image_shape=shape)
        state["test"] = load_dataset_csv(self.run_path(state, TEST_CSV), num_classes=cfg.dataset.classes, image_shape=shape)
        clf = load_classifier(self.run_path(state, CLASSIFIER_FILE))
        clf.freeze()
        state["classifier"] = clf

        generator = restore(self.run_path(state, LATEST_CHECKPOINT)).generator
        if abs(generator.gamma - cfg.gamma) > 1e-15:
            logger.warning(f"⚠️ checkpoint 的 γ={generator.gamma:.6g} 与配置 γ={cfg.gamma:.6g} 不一致，以 checkpoint 为准")
        state["generator"] = generator
        logger.info(f"📦 已加载运行目录 {state['run_dir']}: mode={generator.mode.value}, K={generator.head_cfg.K}")
        return state
