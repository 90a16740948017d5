"""
端到端流水线测试：train / evaluate / export-samples / sweep / 登记库 / 命令行入口
使用极小的二维配置，整体仍需数秒，标记为 integration
"""
import json

import pandas as pd
import pytest
from sqlmodel import select

from config.experiment import parse_config
from experiment_engine.artifacts import (
    CLASSIFIER_FILE,
    CONFIG_FILE,
    EPOCHS_CSV,
    LATEST_CHECKPOINT,
    MANIFEST_FILE,
    REPORT_FILE,
    SAMPLES_CSV,
    TEST_CSV,
    TRAIN_CSV,
    VERDICT_FILE,
    read_manifest,
)
from main import main
from models import EpochLog, ExperimentRun
from services.experiment_manager import (
    EXIT_STAGE_FAILED,
    SWEEP_SUMMARY,
    SWEEP_VERDICT,
    ExperimentManager,
    run_experiment,
)

pytestmark = pytest.mark.integration

TINY = """
name: tiny
seed: 11
dataset:
  kind: blobs
  dim: 2
  classes: 2
  n_train: 80
  n_test: 40
  separation: 1.5
classifier:
  epochs: 30
  hidden: [8, 8]
  batch_size: 32
gmm:
  mode: joint
  modes: 2
  latent_dim: 2
  hidden_dim: 8
  label_emb_dim: 4
upsampler:
  kind: none
budget:
  epsilon: 1/4
training:
  epochs: 3
  samples_per_input: 4
  batch_size: 32
  probe_size: 16
  probe_samples: 4
evaluation:
  samples_per_input: 50
  pr_samples_per_input: 50
  pgd_steps: 5
  cw_steps: 5
  export_samples: 2
  oracle_points_per_dim: 11
"""


# 训练充分、评估样本更多的版本，排序检查应全部通过
TRAINED = (
    TINY.replace("  epochs: 3\n", "  epochs: 15\n  lr: 0.05\n")
    .replace("  samples_per_input: 50\n  pr_samples_per_input: 50\n", "  samples_per_input: 200\n  pr_samples_per_input: 200\n")
)


@pytest.fixture
def tiny_config():
    return parse_config(TINY)


def _write_config(tmp_path, text=TINY):
    path = tmp_path / "tiny.yaml"
    path.write_text(text, encoding="utf-8")
    return path


class TestTrainCommand:
    """train 子命令"""

    def test_writes_all_artifacts(self, tiny_config, settings, tmp_path):
        result = ExperimentManager(settings).run(tiny_config, command="train", out=tmp_path / "run")
        assert result.failed_stage is None
        assert result.exit_code in (0, 1)
        for filename in (TRAIN_CSV, TEST_CSV, CLASSIFIER_FILE, EPOCHS_CSV, REPORT_FILE,
                         VERDICT_FILE, SAMPLES_CSV, MANIFEST_FILE, CONFIG_FILE, LATEST_CHECKPOINT):
            assert (result.run_dir / filename).exists(), filename

        manifest = read_manifest(result.run_dir)
        assert manifest["status"] == "completed"
        assert manifest["completed_stages"][0] == "dataset_builder"
        assert manifest["K"] == 2 and manifest["mode"] == "joint"
        assert len(pd.read_csv(result.run_dir / EPOCHS_CSV)) == 3
        assert parse_config((result.run_dir / CONFIG_FILE).read_text(encoding="utf-8")) == tiny_config

        report = result.report
        assert report.ar_pgd <= report.clean_accuracy
        assert report.key.gamma == pytest.approx(0.25)
        assert report.draws.n_test == 40

    def test_same_config_same_report(self, tiny_config, tmp_path):
        """同一配置在不同目录下两次运行，报告逐字段一致"""
        a = run_experiment(tiny_config, out=tmp_path / "a")
        b = run_experiment(tiny_config, out=tmp_path / "b")
        assert a.report.to_dict() == b.report.to_dict()
        a_json = json.loads((tmp_path / "a" / REPORT_FILE).read_text(encoding="utf-8"))
        b_json = json.loads((tmp_path / "b" / REPORT_FILE).read_text(encoding="utf-8"))
        assert a_json == b_json

    def test_failed_stage_is_recorded(self, settings, tmp_path):
        """数据集文件不存在时在 dataset_builder 失败，manifest 仍然写出"""
        cfg = parse_config(TINY).variant(**{"dataset.path": str(tmp_path / "missing.csv")})
        result = ExperimentManager(settings).run(cfg, out=tmp_path / "run")
        assert result.status == "failed"
        assert result.failed_stage == "dataset_builder"
        assert result.exit_code == EXIT_STAGE_FAILED
        assert result.report is None
        manifest = read_manifest(tmp_path / "run")
        assert manifest["failed_stage"] == "dataset_builder"
        assert manifest["completed_stages"] == []
        assert (tmp_path / "run" / CONFIG_FILE).exists()


class TestTrainedRunDirectory:
    """在已训练运行目录上的 evaluate / export-samples"""

    def test_evaluate_reproduces_report(self, tiny_config, tmp_path):
        run_dir = tmp_path / "run"
        trained = run_experiment(tiny_config, out=run_dir)
        evaluated = run_experiment(tiny_config, command="evaluate", out=run_dir)
        assert evaluated.failed_stage is None
        assert evaluated.report.to_dict() == trained.report.to_dict()
        assert read_manifest(run_dir)["command"] == "evaluate"

    def test_export_samples(self, tiny_config, tmp_path):
        run_dir = tmp_path / "run"
        run_experiment(tiny_config, out=run_dir)
        (run_dir / SAMPLES_CSV).unlink()
        result = run_experiment(tiny_config, command="export-samples", out=run_dir)
        assert result.failed_stage is None
        frame = pd.read_csv(run_dir / SAMPLES_CSV)
        assert len(frame) > 0
        assert read_manifest(run_dir)["completed_stages"] == ["artifact_loader", "sample_exporter"]

    def test_evaluate_without_training_fails(self, tiny_config, tmp_path):
        result = run_experiment(tiny_config, command="evaluate", out=tmp_path / "empty")
        assert result.failed_stage == "artifact_loader"
        assert result.exit_code == EXIT_STAGE_FAILED


class TestRunRegistry:
    """运行状态与逐 epoch 记录写入登记库"""

    def test_run_and_epochs_are_registered(self, tiny_config, settings, tmp_path):
        result = ExperimentManager(settings).run(tiny_config, out=tmp_path / "run")
        run_id = read_manifest(result.run_dir)["run_id"]
        assert run_id is not None

        with settings.get_session() as session:
            run = session.get(ExperimentRun, run_id)
            assert run.status == "completed"
            assert run.mode == "joint"
            assert run.mixture_count == 2
            assert run.nppr_test == pytest.approx(result.report.nppr_test)
            epochs = session.exec(select(EpochLog).where(EpochLog.run_id == run_id)).all()
            assert sorted(e.epoch for e in epochs) == [0, 1, 2]

    def test_failed_run_is_registered(self, settings, tmp_path):
        cfg = parse_config(TINY).variant(**{"dataset.path": str(tmp_path / "missing.csv")})
        ExperimentManager(settings).run(cfg, out=tmp_path / "run")
        with settings.get_session() as session:
            runs = session.exec(select(ExperimentRun)).all()
            assert len(runs) == 1
            assert runs[0].status == "failed"
            assert runs[0].failed_stage == "dataset_builder"


@pytest.mark.slow
class TestSweep:
    """小规模 sweep：两种依赖模式，同一 replicate 共用数据集与分类器"""

    def test_sweep_writes_summary(self, settings, tmp_path):
        cfg = parse_config(TINY + "sweep:\n  modes: [independent, joint]\n  replicates: 1\n  workers: 1\n")
        result = ExperimentManager(settings).sweep(cfg, out=tmp_path / "sweep")
        assert len(result.runs) == 2
        assert all(run.status == "completed" for _, run in result.runs)
        keys = {run.report.key.dataset for _, run in result.runs}
        assert len(keys) == 1

        summary = pd.read_csv(tmp_path / "sweep" / SWEEP_SUMMARY)
        assert list(summary["mode"]) == ["independent", "joint"]
        assert (summary["seed"] == 11).all()
        verdicts = json.loads((tmp_path / "sweep" / SWEEP_VERDICT).read_text(encoding="utf-8"))
        assert "modes[eps=1/4,r0]" in verdicts


class TestMainEntry:
    """命令行入口与退出码"""

    def test_train_then_verify(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("NPPR_OUTPUT_ROOT", str(tmp_path / "runs"))
        monkeypatch.setenv("NPPR_DATABASE_URL", f"sqlite:///{tmp_path / 'cli.db'}")
        config_path = _write_config(tmp_path, TRAINED)
        run_dir = tmp_path / "cli_run"

        code = main(["train", "--config", str(config_path), "--out", str(run_dir)])
        assert code == 0
        assert "nppr_test" in capsys.readouterr().out

        code = main(["verify", str(run_dir)])
        assert code == 0
        assert (run_dir / "cross_verdict.json").exists()
        assert json.loads((run_dir / "cross_verdict.json").read_text(encoding="utf-8"))["passed"]

    def test_invalid_config_exits_with_stage_failure(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("NPPR_OUTPUT_ROOT", str(tmp_path / "runs"))
        monkeypatch.setenv("NPPR_DATABASE_URL", f"sqlite:///{tmp_path / 'cli.db'}")
        config_path = _write_config(tmp_path, TINY.replace("modes: 2", "modes: 0"))
        assert main(["train", "--config", str(config_path)]) == EXIT_STAGE_FAILED
        assert "gmm.modes" in capsys.readouterr().err
