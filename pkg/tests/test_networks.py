"""
分类器、GMM 头与合成数据集测试
"""
import numpy as np
import pytest

from services.data.datasets import (
    DatasetSpec,
    load_dataset_csv,
    make_dataset,
    save_dataset_csv,
    stratified_split,
)
from services.networks.classifier import (
    MLPClassifier,
    load_classifier,
    save_classifier,
    train_classifier,
)
from services.networks.heads import (
    CHOL_DIAG_FLOOR,
    DependencyMode,
    HeadConfig,
    HeadTemperatures,
    MixtureHead,
    chol_from_raw,
    inverse_softplus,
)
from services.oracle.grid import GridSpec, robust_fraction
from services.tensor.tensor import Tensor
from utils.errors import EmptyDatasetError, ModeError, ShapeError


class TestDatasets:
    """合成数据集"""

    def test_same_seed_same_data(self):
        spec = DatasetSpec(kind="blobs", dim=3, classes=3, n_train=30, n_test=10, seed=5)
        a, b = make_dataset(spec), make_dataset(spec)
        np.testing.assert_array_equal(a.x, b.x)
        assert a.fingerprint() == b.fingerprint()
        other = make_dataset(DatasetSpec(kind="blobs", dim=3, classes=3, n_train=30, n_test=10, seed=6))
        assert other.fingerprint() != a.fingerprint()

    def test_rings_and_images_shapes(self):
        rings = make_dataset(DatasetSpec(kind="rings", dim=2, classes=3, n_train=30, n_test=0))
        assert rings.x.shape == (30, 2)
        images = make_dataset(DatasetSpec(kind="grid_image", classes=4, image_shape=(1, 8, 8), n_train=20, n_test=0))
        assert images.x.shape == (20, 64)
        assert images.input_kind == "image"
        with pytest.raises(ValueError):
            make_dataset(DatasetSpec(kind="grid_image", image_shape=None))
        with pytest.raises(ValueError):
            make_dataset(DatasetSpec(kind="spirals"))

    def test_stratified_split_keeps_label_balance(self):
        data = make_dataset(DatasetSpec(kind="blobs", dim=2, classes=4, n_train=80, n_test=20, seed=1))
        train, test = stratified_split(data, test_fraction=0.2, seed=1)
        assert len(train) == 80 and len(test) == 20
        assert np.bincount(test.y).tolist() == [5, 5, 5, 5]
        assert not set(train.ids) & set(test.ids)

    def test_csv_keeps_values_and_ids(self, tmp_path):
        """CSV 读回后数值、标签和 input_id 完全一致"""
        data = make_dataset(DatasetSpec(kind="blobs", dim=3, classes=2, n_train=20, n_test=5, seed=2))
        _, test = stratified_split(data, test_fraction=0.2)
        path = save_dataset_csv(test, tmp_path / "test.csv")
        loaded = load_dataset_csv(path, num_classes=2)
        np.testing.assert_array_equal(loaded.x, test.x)
        np.testing.assert_array_equal(loaded.ids, test.ids)
        assert loaded.fingerprint() == test.fingerprint()

    def test_separated_blobs_have_wide_margin(self, linear_classifier):
        """separation=6 的两类高斯团：≥99% 的点在 L∞ 半径 2σ 内网格验证鲁棒"""
        data = make_dataset(DatasetSpec(kind="blobs", dim=2, classes=2, n_train=300, n_test=0, separation=6.0))
        weight = np.zeros((2, 2))
        weight[0] = [-1.0, 1.0]
        clf = linear_classifier(weight)
        fraction = robust_fraction(clf, data.x, data.y, GridSpec(dims=2, points_per_dim=5, gamma=2.0))
        assert fraction >= 0.99

    def test_empty_dataset_rejected(self):
        data = make_dataset(DatasetSpec(kind="blobs", dim=2, classes=2, n_train=0, n_test=0))
        with pytest.raises(EmptyDatasetError):
            data.require_nonempty()


class TestClassifier:
    """分类器训练、冻结与快照"""

    def test_trains_on_blobs(self):
        data = make_dataset(DatasetSpec(kind="blobs", dim=2, classes=2, n_train=200, n_test=0, separation=4.0))
        result = train_classifier(data, epochs=40, seed=0, hidden=(16, 16), batch_size=64)
        assert result.train_accuracy >= 0.9
        assert result.reached_threshold
        assert result.classifier.frozen
        assert all(not p.requires_grad for p in result.classifier.parameters())

    @pytest.mark.slow
    def test_trains_on_grid_images(self):
        """1×8×8 网格图像、4 类，训练准确率 ≥ 0.9"""
        data = make_dataset(DatasetSpec(kind="grid_image", classes=4, image_shape=(1, 8, 8), n_train=400, n_test=0))
        result = train_classifier(data, epochs=60, seed=0, hidden=(32, 32), batch_size=64)
        assert result.train_accuracy >= 0.9

    def test_features_and_shape_errors(self, toy_classifier):
        x = np.zeros((5, 2))
        assert toy_classifier.features(x).shape == (5, 8)
        assert toy_classifier.hook.feature_dim == 8
        with pytest.raises(ShapeError):
            toy_classifier(np.zeros((5, 3)))

    def test_frozen_classifier_passes_input_gradient(self, toy_classifier):
        """冻结参数不收梯度，输入仍可收到梯度"""
        x = Tensor(np.ones((3, 2)), requires_grad=True)
        toy_classifier(x).sum().backward()
        assert x.grad is not None and x.grad.shape == (3, 2)
        assert all(p.grad is None for p in toy_classifier.parameters())

    def test_snapshot_round_trip(self, toy_classifier, tmp_path):
        path = save_classifier(toy_classifier, tmp_path / "classifier.json")
        loaded = load_classifier(path)
        assert loaded.frozen
        assert loaded.fingerprint() == toy_classifier.fingerprint()
        x = np.random.default_rng(0).normal(size=(20, 2))
        np.testing.assert_array_equal(loaded.logits(x), toy_classifier.logits(x))

    def test_image_shape_must_flatten(self):
        with pytest.raises(ShapeError):
            MLPClassifier(input_dim=10, num_classes=2, input_kind="image", image_shape=(1, 3, 3))


class TestMixtureHead:
    """四种依赖模式的 GMM 头"""

    B, K, D, F, C = 6, 3, 2, 5, 4

    def _head(self, mode, **kwargs):
        cfg = HeadConfig(mode=mode, K=self.K, latent_dim=self.D, hidden_dim=8, label_emb_dim=4, **kwargs)
        return MixtureHead(cfg, feature_dim=self.F, num_classes=self.C, rng=np.random.default_rng(0))

    def _inputs(self):
        rng = np.random.default_rng(1)
        return rng.normal(size=(self.B, self.F)), np.array([0, 1, 2, 3, 0, 1])

    @pytest.mark.parametrize("mode", list(DependencyMode))
    def test_shapes_and_cholesky(self, mode):
        """输出形状正确，Cholesky 因子下三角且对角线为正"""
        features, labels = self._inputs()
        params = self._head(mode)(features=features, labels=labels, batch_size=self.B)
        assert params.pi_logits.shape == (self.B, self.K)
        assert params.means.shape == (self.B, self.K, self.D)
        assert params.chol_factors.shape == (self.B, self.K, self.D, self.D)
        L = params.chol_factors.data
        assert np.all(np.diagonal(L, axis1=-2, axis2=-1) > 0)
        assert np.all(np.triu(L, k=1) == 0)
        np.testing.assert_allclose(params.weights().sum(axis=1), 1.0)

    def test_initial_scale(self):
        """初始化时对角线约为 0.5，均值为 0"""
        params = self._head(DependencyMode.INDEPENDENT)(batch_size=2)
        np.testing.assert_allclose(np.diagonal(params.chol_factors.data, axis1=-2, axis2=-1), 0.5)
        np.testing.assert_array_equal(params.means.data, 0.0)

    def test_missing_inputs_raise_mode_error(self):
        features, labels = self._inputs()
        with pytest.raises(ModeError):
            self._head(DependencyMode.JOINT_DEP)(features=features)
        with pytest.raises(ModeError):
            self._head(DependencyMode.INPUT_DEP)(labels=labels)
        with pytest.raises(ModeError):
            MixtureHead(HeadConfig(mode=DependencyMode.INPUT_DEP, K=2), feature_dim=None)

    def test_label_mode_depends_only_on_label(self):
        """label 模式：同标签得到相同混合权重，均值全局共享"""
        features, labels = self._inputs()
        head = self._head(DependencyMode.LABEL_DEP)
        params = head(labels=labels)
        w = params.weights()
        np.testing.assert_array_equal(w[0], w[4])
        np.testing.assert_array_equal(params.means.data[0], params.means.data[3])

    def test_full_label_conditioning(self):
        head = self._head(DependencyMode.LABEL_DEP, full_label_conditioning=True)
        assert not head.global_params
        params = head(labels=np.array([0, 1]))
        assert not np.array_equal(params.means.data[0], params.means.data[1])

    def test_input_mode_depends_on_features(self):
        features, labels = self._inputs()
        params = self._head(DependencyMode.INPUT_DEP)(features=features)
        assert not np.array_equal(params.pi_logits.data[0], params.pi_logits.data[1])

    def test_temperatures_divide_outputs(self):
        """温度在激活前作为除数"""
        head = self._head(DependencyMode.INDEPENDENT)
        head.pi.data = np.array([1.0, -2.0, 0.5])
        head.mu.data = np.ones((self.K, self.D))
        base = head(batch_size=1)
        hot = head(batch_size=1, temps=HeadTemperatures(pi=2.0, mu=4.0))
        np.testing.assert_allclose(hot.pi_logits.data, base.pi_logits.data / 2.0)
        np.testing.assert_allclose(hot.means.data, base.means.data / 4.0)

    def test_label_embedding_is_normalized(self):
        head = self._head(DependencyMode.JOINT_DEP)
        rows = head.embedding(np.arange(self.C)).data
        np.testing.assert_allclose(np.linalg.norm(rows, axis=1), 1.0)

    def test_chol_from_raw_floor(self):
        """对角线 = softplus(raw) + 1e-6 > 0，即使 raw 非常负"""
        L = chol_from_raw(Tensor(np.full((1, 2, 2), -50.0))).data
        assert np.all(np.diagonal(L, axis1=-2, axis2=-1) >= CHOL_DIAG_FLOOR)
        assert inverse_softplus(np.log1p(np.exp(0.3))) == pytest.approx(0.3)
