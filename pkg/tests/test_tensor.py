"""
自动微分引擎测试：逐运算梯度校验、广播、no_grad、数值保护
"""
import numpy as np
import pytest

from services.tensor import tensor as T
from services.tensor.gradcheck import gradcheck
from services.tensor.tensor import Tensor, forward_op, graph_nodes, no_grad, numerics, parameter, supported_ops
from utils.errors import ShapeError


def _away_from_zero(rng, shape, gap=0.1):
    x = rng.normal(size=shape)
    return x + np.where(x >= 0, gap, -gap)


def _positive(rng, shape):
    return 0.5 + rng.uniform(size=shape)


# (名字, 构造函数) ；构造函数返回 (叶子张量列表, 前向闭包)
def _case_binary(op, shape_a, shape_b, positive_b=False):
    def build(rng):
        a = parameter(rng.normal(size=shape_a))
        b = parameter(_positive(rng, shape_b) if positive_b else rng.normal(size=shape_b))
        return [a, b], lambda: op(a, b)
    return build


def _case_unary(op, shape, sampler=None):
    def build(rng):
        x = parameter(sampler(rng, shape) if sampler else rng.normal(size=shape))
        return [x], lambda: op(x)
    return build


def _case_affine(rng):
    x, w, b = parameter(rng.normal(size=(3, 4))), parameter(rng.normal(size=(4, 2))), parameter(rng.normal(size=2))
    return [x, w, b], lambda: T.affine(x, w, b)


def _case_batch_norm(rng):
    x, g, b = parameter(rng.normal(size=(6, 3))), parameter(rng.normal(size=3)), parameter(rng.normal(size=3))
    return [x, g, b], lambda: T.batch_norm(x, g, b)


def _case_take_along(rng):
    x = parameter(rng.normal(size=(4, 3)))
    index = rng.integers(0, 3, size=4)
    return [x], lambda: T.take_along(x, index)


def _case_gather_rows(rng):
    table = parameter(rng.normal(size=(5, 3)))
    return [table], lambda: T.gather_rows(table, [0, 2, 2, 4])


def _case_concat(rng):
    a, b = parameter(rng.normal(size=(2, 3))), parameter(rng.normal(size=(2, 2)))
    return [a, b], lambda: T.concat([a, b], axis=-1)


GRAD_CASES = {
    "add_broadcast": _case_binary(T.add, (3, 4), (4,)),
    "sub_broadcast": _case_binary(T.sub, (3, 4), (3, 1)),
    "mul": _case_binary(T.mul, (2, 3), (2, 3)),
    "div": _case_binary(T.div, (2, 3), (2, 3), positive_b=True),
    "matmul_batched": _case_binary(T.matmul, (2, 3, 4), (4, 5)),
    "affine": _case_affine,
    "relu": _case_unary(T.relu, (3, 4), _away_from_zero),
    "tanh": _case_unary(T.tanh, (3, 4)),
    "exp": _case_unary(T.exp, (3, 4)),
    "log": _case_unary(T.log, (3, 4), _positive),
    "sqrt": _case_unary(T.sqrt, (3, 4), _positive),
    "square": _case_unary(T.square, (3, 4)),
    "sigmoid": _case_unary(T.sigmoid, (3, 4)),
    "softplus": _case_unary(T.softplus, (3, 4)),
    "neg": _case_unary(T.neg, (3, 4)),
    "scale": _case_unary(lambda x: T.scale(x, -2.5), (3, 4)),
    "softmax": _case_unary(lambda x: T.softmax(x, axis=-1), (3, 4)),
    "log_softmax": _case_unary(lambda x: T.log_softmax(x, axis=-1), (3, 4)),
    "reduce_sum": _case_unary(lambda x: T.reduce_sum(x, axis=(0, 2)), (2, 3, 4)),
    "reduce_mean": _case_unary(lambda x: T.reduce_mean(x, axis=0, keepdims=True), (3, 4)),
    "reduce_max": _case_unary(lambda x: T.reduce_max(x, axis=-1), (3, 5)),
    "reshape": _case_unary(lambda x: T.reshape(x, (4, 6)), (2, 3, 4)),
    "swapaxes": _case_unary(lambda x: T.swapaxes(x, 0, 2), (2, 3, 4)),
    "take_along": _case_take_along,
    "gather_rows": _case_gather_rows,
    "concat": _case_concat,
    "batch_norm": _case_batch_norm,
}


# 复合图的每一步：(当前节点, 之前任一节点, 叶子) -> 新节点，形状保持 (3, 4)
COMPOSITE_STEPS = [
    lambda x, other, leaves: T.add(x, leaves["b"]),
    lambda x, other, leaves: T.add(x, other),
    lambda x, other, leaves: T.mul(x, T.tanh(other)),
    lambda x, other, leaves: T.tanh(x),
    lambda x, other, leaves: T.sigmoid(x),
    lambda x, other, leaves: T.log(T.softplus(x)),
    lambda x, other, leaves: T.sub(x, T.reduce_mean(x, axis=-1, keepdims=True)),
    lambda x, other, leaves: T.matmul(x, leaves["w"]),
    lambda x, other, leaves: T.softmax(x, axis=-1),
    lambda x, other, leaves: T.exp(T.tanh(x)),
    lambda x, other, leaves: T.div(x, T.add(T.square(other), 1.0)),
]


def _composite_graph(rng, n_ops=5):
    """随机抽取 n_ops 步组成计算图；节点可被后续步骤重复使用，b 按行广播"""
    leaves = {
        "a": parameter(rng.uniform(-2.0, 2.0, size=(3, 4))),
        "b": parameter(rng.uniform(-2.0, 2.0, size=(4,))),
        "w": parameter(rng.uniform(-2.0, 2.0, size=(4, 4)) / 2.0),
    }
    plan = [(int(rng.integers(len(COMPOSITE_STEPS))), int(rng.integers(i + 1))) for i in range(n_ops)]

    def forward():
        x = leaves["a"]
        seen = [x]
        for step, reuse in plan:
            x = COMPOSITE_STEPS[step](x, seen[reuse], leaves)
            seen.append(x)
        return x
    return list(leaves.values()), forward


class TestGradients:
    """逐运算中心差分梯度校验"""

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    @pytest.mark.parametrize("name", sorted(GRAD_CASES))
    def test_gradcheck(self, name, seed):
        """解析梯度与中心差分的相对误差 ≤ 1e-5"""
        rng = np.random.default_rng([seed, len(name)])
        inputs, forward = GRAD_CASES[name](rng)
        out = forward()
        weights = rng.normal(size=out.shape)

        def loss():
            return T.reduce_sum(T.mul(forward(), weights))

        assert gradcheck(loss, inputs) <= 1e-5

    @pytest.mark.parametrize("seed", range(25))
    def test_random_composite_graph(self, seed):
        """随机 5 步复合图（含广播与节点复用）的梯度与中心差分一致"""
        rng = np.random.default_rng([seed, 97])
        inputs, forward = _composite_graph(rng)
        weights = rng.normal(size=forward().shape)

        def loss():
            return T.reduce_sum(T.mul(forward(), weights))

        assert gradcheck(loss, inputs) <= 1e-5

    def test_gradient_accumulates_over_reuse(self):
        """同一张量多次参与运算时梯度累加"""
        x = parameter([1.5, -2.0])
        T.reduce_sum(T.mul(x, x)).backward()
        np.testing.assert_allclose(x.grad, [3.0, -4.0])

    def test_reduce_max_tie_goes_to_lowest_index(self):
        """最大值并列时梯度只回传给最小下标"""
        x = parameter([[1.0, 3.0, 3.0]])
        T.reduce_sum(T.reduce_max(x, axis=-1)).backward()
        np.testing.assert_array_equal(x.grad, [[0.0, 1.0, 0.0]])

    def test_matmul_broadcast_shape(self):
        a = Tensor(np.ones((5, 2, 3)))
        b = Tensor(np.ones((3, 4)))
        assert T.matmul(a, b).shape == (5, 2, 4)


class TestGraph:
    """计算图记录与 no_grad"""

    def test_no_grad_skips_recording(self):
        x = parameter([1.0, 2.0])
        with no_grad():
            y = T.mul(x, 3.0)
        assert not y.requires_grad
        assert T.mul(x, 3.0).requires_grad

    def test_backward_requires_scalar_root(self):
        x = parameter([1.0, 2.0])
        with pytest.raises(ShapeError):
            T.mul(x, 2.0).backward()

    def test_forward_op_dispatch(self):
        """按名字执行运算，结果与直接调用一致"""
        a, b = Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])
        np.testing.assert_allclose(forward_op("matmul", a, b).data, [[11.0]])
        np.testing.assert_allclose(forward_op("concat", a, a, axis=0).data, [[1.0, 2.0], [1.0, 2.0]])
        assert "gather_row" in supported_ops()

    def test_forward_op_unknown_kind(self):
        with pytest.raises(ValueError):
            forward_op("conv2d", Tensor([1.0]))

    def test_graph_nodes_topological(self):
        """根节点排在最后"""
        x = parameter([1.0, 2.0])
        root = T.reduce_sum(T.tanh(x))
        nodes = graph_nodes(root)
        assert [n["op"] for n in nodes] == ["leaf", "tanh", "reduce_sum"]
        assert nodes[-1]["output"] == ()


class TestShapesAndNumerics:
    """形状错误与数值保护"""

    def test_matmul_mismatch_raises(self):
        with pytest.raises(ShapeError) as e:
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
        assert e.value.op == "matmul"

    def test_affine_bias_mismatch_raises(self):
        with pytest.raises(ShapeError):
            T.affine(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 4))), Tensor(np.ones(3)))

    def test_gather_rows_out_of_range(self):
        with pytest.raises(ShapeError):
            T.gather_rows(Tensor(np.ones((3, 2))), [0, 3])

    def test_log_floor_is_counted(self):
        """低于 floor 的输入（含极小正数）被截断并计数，结果有限"""
        numerics.reset()
        out = T.log(Tensor([0.0, -1.0, 1e-300, 1.0]))
        assert np.all(np.isfinite(out.data))
        assert out.data[0] == pytest.approx(np.log(T.LOG_FLOOR))
        assert out.data[2] == pytest.approx(np.log(T.LOG_FLOOR))
        assert numerics.snapshot()["log"] == 3
        numerics.reset()
        assert numerics.snapshot() == {}

    def test_log_floor_blocks_gradient(self):
        x = parameter([0.0, 2.0])
        T.reduce_sum(T.log(x)).backward()
        np.testing.assert_allclose(x.grad, [0.0, 0.5])
