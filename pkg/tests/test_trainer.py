"""
生成器训练测试：确定性、checkpoint 续训、NaN 中止、学习率默认值、训练效果
"""
import math
import shutil
import statistics

import numpy as np
import pytest

import services.generator_trainer as trainer
from services.data.datasets import DatasetSpec, make_dataset, stratified_split
from services.generator_trainer import (
    BEST_CHECKPOINT,
    EPOCH_COLUMNS,
    LATEST_CHECKPOINT,
    TrainConfig,
    batch_bounds,
    build_generator,
    read_epoch_csv,
    resolve_lr_schedule,
    restore,
    train_generator,
    write_epoch_csv,
)
from services.networks.classifier import train_classifier
from services.networks.heads import DependencyMode, HeadConfig
from services.perturbation.upsample import UpsamplerConfig
from services.robustness.estimators import combined_half_width, nppr_estimate, pr_estimate
from services.robustness.types import PerturbationLaw
from utils.errors import CheckpointError


def _config(**overrides) -> TrainConfig:
    base = dict(
        epochs=3, M=4, batch_size=32, seed=0, mode=DependencyMode.JOINT_DEP,
        probe_size=16, probe_samples=4, lr=5e-2,
    )
    base.update(overrides)
    return TrainConfig(**base)


def _rows(records):
    return [r.to_row() for r in records]


@pytest.fixture
def fresh_generator(toy_classifier, toy_split, toy_head_config, toy_upsampler_config):
    """每次调用都按相同种子构造新的生成器"""
    train, _ = toy_split

    def build():
        return build_generator(toy_classifier, train, toy_head_config, toy_upsampler_config, seed=0)
    return build


class TestLearningRateDefaults:
    """学习率调度的模式默认值"""

    def test_independent_with_fixed_upsampler_uses_cosine(self):
        schedule = resolve_lr_schedule(TrainConfig(mode=DependencyMode.INDEPENDENT), upsampler_trainable=False)
        assert schedule.kind == "cosine"
        assert schedule.base_lr == pytest.approx(2e-2)
        assert schedule.warmup_epochs == 20

    def test_other_modes_use_constant(self):
        schedule = resolve_lr_schedule(TrainConfig(mode=DependencyMode.JOINT_DEP), upsampler_trainable=True)
        assert schedule.kind == "constant"
        assert schedule.base_lr == pytest.approx(5e-4)

    def test_explicit_values_override(self):
        cfg = TrainConfig(epochs=5, lr=1e-3, lr_schedule="cosine")
        schedule = resolve_lr_schedule(cfg, upsampler_trainable=True)
        assert (schedule.kind, schedule.base_lr, schedule.warmup_epochs) == ("cosine", 1e-3, 5)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(M=0)
        with pytest.raises(ValueError):
            TrainConfig(mode="diagonal")


class TestBatchBounds:
    """minibatch 划分"""

    def test_trailing_single_sample_is_merged(self):
        assert batch_bounds(65, 32) == [(0, 32), (32, 65)]
        assert batch_bounds(33, 32) == [(0, 33)]

    def test_regular_split(self):
        assert batch_bounds(64, 32) == [(0, 32), (32, 64)]
        assert batch_bounds(66, 32) == [(0, 32), (32, 64), (64, 66)]
        assert batch_bounds(1, 32) == [(0, 1)]
        assert batch_bounds(0, 32) == []

    def test_training_set_with_single_leftover(self, toy_classifier, fresh_generator):
        """训练集大小为 batch_size + 1 时末尾单个样本并入前一个 batch，训练正常完成"""
        data = make_dataset(DatasetSpec(kind="blobs", dim=2, classes=2, n_train=32, n_test=1, separation=1.5, seed=4))
        assert len(data) == 33
        outcome = train_generator(toy_classifier, fresh_generator(), data, _config(epochs=2))
        assert [r.status for r in outcome.records] == ["ok", "ok"]


class TestTraining:
    """训练循环"""

    def test_same_seed_same_history(self, toy_classifier, toy_split, fresh_generator):
        """同一种子两次训练得到完全相同的逐 epoch 记录与参数"""
        train, test = toy_split
        a = train_generator(toy_classifier, fresh_generator(), train, _config(), test=test)
        b = train_generator(toy_classifier, fresh_generator(), train, _config(), test=test)
        assert _rows(a.records) == _rows(b.records)
        assert a.nppr_test == b.nppr_test
        for name, value in a.generator.state_dict().items():
            np.testing.assert_array_equal(value, b.generator.state_dict()[name])
        assert [r.epoch for r in a.records] == [0, 1, 2]
        assert all(0.0 <= r.nppr_running <= 1.0 for r in a.records)

    def test_resume_matches_uninterrupted_run(self, toy_classifier, toy_split, fresh_generator, tmp_path):
        """从第 2 个 epoch 的 checkpoint 续训，结果与不中断训练一致"""
        train, _ = toy_split
        saved = tmp_path / "epoch2.json"
        straight_dir = tmp_path / "straight"

        def keep_epoch_two(record):
            if record.epoch == 2:
                shutil.copy(straight_dir / LATEST_CHECKPOINT, saved)

        cfg = _config(epochs=4, eval_every=2, checkpoint_dir=straight_dir)
        straight = train_generator(toy_classifier, fresh_generator(), train, cfg, on_epoch=keep_epoch_two)
        assert (straight_dir / BEST_CHECKPOINT).exists()

        resumed_cfg = _config(epochs=4, eval_every=2, checkpoint_dir=tmp_path / "resumed")
        resumed = train_generator(toy_classifier, fresh_generator(), train, resumed_cfg, resume_from=saved)
        assert _rows(resumed.records) == _rows(straight.records)
        for name, value in straight.generator.state_dict().items():
            np.testing.assert_array_equal(value, resumed.generator.state_dict()[name])

    def test_nan_loss_aborts_epoch(self, toy_classifier, toy_split, fresh_generator, monkeypatch):
        """NaN 损失时该 epoch 中止，参数恢复到 epoch 开始时的状态"""
        train, _ = toy_split
        original = trainer._batch_loss
        calls = {"n": 0}

        def flaky(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] == 3:  # epoch 1 的第一个 batch
                return float("nan")
            return original(*args, **kwargs)

        monkeypatch.setattr(trainer, "_batch_loss", flaky)
        generator = fresh_generator()
        states = []
        outcome = train_generator(
            toy_classifier, generator, train, _config(),
            on_epoch=lambda record: states.append(generator.state_dict()),
        )
        assert outcome.aborted_epochs == [1]
        assert outcome.records[1].status == "nan_abort"
        assert math.isnan(outcome.records[1].train_loss)
        assert outcome.records[2].status == "ok"
        for name, value in states[0].items():
            np.testing.assert_array_equal(value, states[1][name])

    def test_divergence_is_flagged(self, toy_classifier, toy_split, fresh_generator, monkeypatch):
        train, _ = toy_split
        losses = iter([1.0, 1.0] + [100.0] * 20)
        monkeypatch.setattr(trainer, "_batch_loss", lambda *args, **kwargs: next(losses))
        cfg = _config(epochs=4, divergence_factor=10.0, divergence_patience=2)
        assert train_generator(toy_classifier, fresh_generator(), train, cfg).diverged

    def test_classifier_is_untouched(self, toy_classifier, toy_split, fresh_generator):
        """生成器训练前后分类器指纹与参数逐位不变"""
        train, test = toy_split
        fingerprint = toy_classifier.fingerprint()
        before = {name: value.copy() for name, value in toy_classifier.state_dict().items()}
        train_generator(toy_classifier, fresh_generator(), train, _config(), test=test)
        assert toy_classifier.fingerprint() == fingerprint
        for name, value in toy_classifier.state_dict().items():
            np.testing.assert_array_equal(value, before[name])

    def test_rejects_mode_mismatch(self, toy_classifier, toy_split, fresh_generator):
        train, _ = toy_split
        with pytest.raises(ValueError):
            train_generator(toy_classifier, fresh_generator(), train, _config(mode=DependencyMode.INPUT_DEP))

    def test_epoch_csv_columns(self, toy_classifier, toy_split, fresh_generator, tmp_path):
        train, _ = toy_split
        outcome = train_generator(toy_classifier, fresh_generator(), train, _config(epochs=2))
        frame = read_epoch_csv(write_epoch_csv(outcome.records, tmp_path / "epochs.csv"))
        assert list(frame.columns) == EPOCH_COLUMNS
        assert len(frame) == 2


class TestCheckpoint:
    """checkpoint 读写"""

    def test_restore_rebuilds_generator(self, toy_classifier, toy_split, fresh_generator, tmp_path):
        train, test = toy_split
        outcome = train_generator(toy_classifier, fresh_generator(), train, _config(checkpoint_dir=tmp_path))
        state = restore(tmp_path / LATEST_CHECKPOINT)
        assert state.next_epoch == 3
        assert state.generator.eval_temps == outcome.generator.eval_temps
        a = nppr_estimate(toy_classifier, outcome.generator, test, M=8, seed=1)
        b = nppr_estimate(toy_classifier, state.generator, test, M=8, seed=1)
        assert a == b

    def test_restore_rejects_other_architecture(self, toy_classifier, toy_split, fresh_generator, tmp_path):
        train, _ = toy_split
        train_generator(toy_classifier, fresh_generator(), train, _config(epochs=1, checkpoint_dir=tmp_path))
        other = build_generator(
            toy_classifier, train,
            HeadConfig(mode=DependencyMode.JOINT_DEP, K=3, latent_dim=2, hidden_dim=8, label_emb_dim=4),
            UpsamplerConfig(mode="none", gamma=0.25),
        )
        with pytest.raises(CheckpointError):
            restore(tmp_path / LATEST_CHECKPOINT, generator=other)


@pytest.mark.slow
@pytest.mark.statistical
class TestEfficacy:
    """边界附近样本较多时，训练后的生成器比初始和均匀扰动更具攻击性"""

    def test_training_lowers_nppr(self):
        data = make_dataset(DatasetSpec(kind="blobs", dim=2, classes=2, n_train=200, n_test=100, separation=1.0, seed=0))
        train, test = stratified_split(data, test_fraction=1.0 / 3.0, seed=0)
        clf = train_classifier(train, epochs=40, seed=0, hidden=(16, 16), batch_size=64).classifier
        gamma = 0.5
        generator = build_generator(
            clf, train,
            HeadConfig(mode=DependencyMode.JOINT_DEP, K=3, latent_dim=2, hidden_dim=16, label_emb_dim=8),
            UpsamplerConfig(mode="none", gamma=gamma),
        )
        before = nppr_estimate(clf, generator, test, M=64, seed=5)
        cfg = TrainConfig(epochs=30, lr=5e-2, M=16, batch_size=64, mode=DependencyMode.JOINT_DEP, probe_size=32, probe_samples=8)
        outcome = train_generator(clf, generator, train, cfg)
        after = nppr_estimate(clf, outcome.generator, test, M=64, seed=5)
        uniform = pr_estimate(clf, test, PerturbationLaw.uniform(), gamma=gamma, M=64, seed=5)
        assert after <= before - 0.02
        assert after <= uniform - 0.02


@pytest.fixture(scope="module")
def boundary_pair():
    """边界附近样本较多的二维数据与分类器"""
    data = make_dataset(DatasetSpec(kind="blobs", dim=2, classes=2, n_train=200, n_test=100, separation=1.0, seed=0))
    train, test = stratified_split(data, test_fraction=1.0 / 3.0, seed=0)
    clf = train_classifier(train, epochs=40, seed=0, hidden=(16, 16), batch_size=64).classifier
    return clf, train, test


ORDERING_GAMMA = 0.5
ORDERING_EVAL_M = 64


def _median_nppr(mode, clf, train, test, seeds=range(5)):
    """多个种子分别训练后 NPPR 的中位数"""
    values = []
    for seed in seeds:
        generator = build_generator(
            clf, train,
            HeadConfig(mode=mode, K=3, latent_dim=2, hidden_dim=16, label_emb_dim=8),
            UpsamplerConfig(mode="none", gamma=ORDERING_GAMMA),
            seed=seed,
        )
        cfg = TrainConfig(
            epochs=20, lr=5e-2, M=16, batch_size=64, mode=mode, seed=seed,
            probe_size=32, probe_samples=8,
        )
        outcome = train_generator(clf, generator, train, cfg)
        values.append(nppr_estimate(clf, outcome.generator, test, M=ORDERING_EVAL_M, seed=5))
    return statistics.median(values)


@pytest.fixture(scope="module")
def independent_median(boundary_pair):
    return _median_nppr(DependencyMode.INDEPENDENT, *boundary_pair)


@pytest.mark.slow
@pytest.mark.statistical
class TestDependencyOrdering:
    """条件依赖的生成器在 5 个种子上的 NPPR 中位数不高于独立生成器（留出 MC 半宽）"""

    @pytest.mark.parametrize("mode", [DependencyMode.INPUT_DEP, DependencyMode.JOINT_DEP])
    def test_conditional_not_weaker_than_independent(self, boundary_pair, independent_median, mode):
        clf, train, test = boundary_pair
        conditional = _median_nppr(mode, clf, train, test)
        n = len(test) * ORDERING_EVAL_M
        assert conditional <= independent_median + combined_half_width(conditional, n, independent_median, n)
