from experiment_engine.artifacts import CLASSIFIER_FILE
from experiment_engine.nodes.stage import PipelineStage
from experiment_engine.state import ExperimentState
from services.networks.classifier import load_classifier, save_classifier, train_classifier
from utils.logger import logger


class ClassifierTrainer(PipelineStage):
    """训练并冻结待评估的分类器；续训时复用运行目录中的权重"""

    name = "classifier_trainer"

    def execute(self, state: ExperimentState) -> ExperimentState:
        cfg = state["config"]
        path = self.run_path(state, CLASSIFIER_FILE)
        train = state["train"]

        if state.get("resume") and path.exists():
            clf = load_classifier(path)
            clf.freeze()
            logger.info(f"🔄 复用已有分类器: {path}")
        else:
            result = train_classifier(
                train,
                epochs=cfg.classifier.epochs,
                seed=cfg.seed,
                hidden=tuple(cfg.classifier.hidden),
                lr=cfg.classifier.lr,
                batch_size=cfg.classifier.batch_size,
                accuracy_threshold=cfg.classifier.accuracy_threshold,
            )
            clf = result.classifier
            save_classifier(clf, path)

        state["classifier"] = clf
        state["classifier_accuracy"] = float((clf.predict(train.x) == train.y).mean())
        self.add_artifact(state, "classifier", CLASSIFIER_FILE)
        return state
