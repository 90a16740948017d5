from experiment_engine.artifacts import TEST_CSV, TRAIN_CSV
from experiment_engine.nodes.stage import PipelineStage
from experiment_engine.state import ExperimentState
from services.data.datasets import load_dataset_csv, make_dataset, save_dataset_csv, stratified_split
from utils.logger import logger


class DatasetBuilder(PipelineStage):
    """生成（或从 CSV 读取）数据集，分层切分后写出 train.csv / test.csv"""

    name = "dataset_builder"

    def execute(self, state: ExperimentState) -> ExperimentState:
        cfg = state["config"]
        spec = cfg.dataset_spec()
        if cfg.dataset.path:
            dataset = load_dataset_csv(cfg.dataset.path, num_classes=spec.classes, image_shape=spec.image_shape)
            logger.info(f"📦 从 {cfg.dataset.path} 读取 {len(dataset)} 个样本")
        else:
            dataset = make_dataset(spec)
        dataset.require_nonempty()
        test_fraction = spec.n_test / (spec.n_train + spec.n_test)
        train, test = stratified_split(dataset, test_fraction=test_fraction, seed=spec.seed)
        train.require_nonempty()
        test.require_nonempty()

        save_dataset_csv(train, self.run_path(state, TRAIN_CSV))
        save_dataset_csv(test, self.run_path(state, TEST_CSV))
        self.add_artifact(state, "train", TRAIN_CSV)
        self.add_artifact(state, "test", TEST_CSV)
        logger.info(f"📋 训练集 {len(train)} 个, 测试集 {len(test)} 个, 输入维度 {train.input_dim}")
        state["train"] = train
        state["test"] = test
        return state
