from experiment_engine.artifacts import BEST_CHECKPOINT, EPOCHS_CSV, LATEST_CHECKPOINT
from experiment_engine.nodes.stage import PipelineStage
from experiment_engine.state import ExperimentState
from services.generator_trainer import EpochRecord, build_generator, train_generator, write_epoch_csv
from utils.logger import logger


class GeneratorFitter(PipelineStage):
    """在冻结分类器上训练扰动生成器，写出 epochs.csv 与 checkpoint"""

    name = "generator_fitter"

    def execute(self, state: ExperimentState) -> ExperimentState:
        cfg = state["config"]
        clf, train, test = state["classifier"], state["train"], state["test"]
        generator = build_generator(
            clf, train, cfg.head_config(), cfg.upsampler_config(), anneal=cfg.anneal_schedule(), seed=cfg.seed
        )

        latest = self.run_path(state, LATEST_CHECKPOINT)
        resume_from = latest if state.get("resume") and latest.exists() else None
        if state.get("resume") and resume_from is None:
            logger.warning(f"⚠️ 未找到 {latest}，从头开始训练生成器")

        run_id = state.get("run_id")

        def on_epoch(record: EpochRecord) -> None:
            if self.run_log is not None:
                self.run_log.record_epoch(run_id, record)

        outcome = train_generator(
            clf,
            generator,
            train,
            cfg.train_config(checkpoint_dir=state["run_dir"]),
            test=test,
            resume_from=resume_from,
            on_epoch=on_epoch,
        )
        write_epoch_csv(outcome.records, self.run_path(state, EPOCHS_CSV))
        self.add_artifact(state, "epochs", EPOCHS_CSV)
        self.add_artifact(state, "checkpoint", LATEST_CHECKPOINT)
        if self.run_path(state, BEST_CHECKPOINT).exists():
            self.add_artifact(state, "best_checkpoint", BEST_CHECKPOINT)
        if outcome.diverged:
            logger.warning("⚠️ 生成器训练被标记为发散，评估结果仅供参考")

        state["generator"] = outcome.generator
        state["outcome"] = outcome
        return state
