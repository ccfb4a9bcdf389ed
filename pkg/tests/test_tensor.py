"""Core tensor/tape behavior: forward values, backward rules, contracts."""
import numpy as np
import pytest

from quarts import tensor as T
from quarts.gradcheck import grad_check, op_checks
from quarts.tensor import Tape, Tensor


@pytest.fixture
def f64():
    with T.using_dtype(np.float64):
        yield


class TestMatmul:
    def test_identity(self):
        a = Tensor([[2.0, -1.0], [0.5, 3.0]])
        eye = Tensor(np.eye(2))
        np.testing.assert_array_equal(T.matmul(eye, a).data, a.data)

    def test_hand_case(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[1.0], [1.0]])
        np.testing.assert_array_equal(T.matmul(a, b).data, [[3.0], [7.0]])

    def test_dimension_mismatch_names_shapes(self):
        with pytest.raises(T.ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))

    def test_gradient_matches_finite_differences(self, f64):
        rng = np.random.default_rng(3)
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        err = grad_check(lambda: T.sum_axis(T.matmul(a, b)), [a, b])
        assert err < 1e-4

    def test_matvec_and_dot(self):
        m = Tensor([[1.0, 2.0], [3.0, 4.0]])
        v = Tensor([1.0, 1.0])
        np.testing.assert_array_equal(T.matmul(m, v).data, [3.0, 7.0])
        assert T.matmul(v, v).item() == 2.0

    def test_batched_against_loop(self):
        rng = np.random.default_rng(0)
        a = Tensor(rng.normal(size=(3, 2, 4)).astype(np.float32))
        w = Tensor(rng.normal(size=(4, 5)).astype(np.float32))
        out = T.matmul(a, w).data
        for i in range(3):
            np.testing.assert_allclose(out[i], a.data[i] @ w.data, rtol=1e-6)


class TestElementwise:
    def test_tanh_zero(self, f64):
        x = Tensor([0.0], requires_grad=True)
        with Tape() as tape:
            y = T.tanh(x)
            tape.backward(T.sum_axis(y))
        assert y.item() == 0.0
        np.testing.assert_array_equal(x.grad, [1.0])

    def test_sigmoid_zero(self):
        assert T.sigmoid(Tensor([0.0])).data[0] == 0.5

    def test_sigmoid_extreme_inputs_finite(self):
        y = T.sigmoid(Tensor([-500.0, 500.0])).data
        assert np.all(np.isfinite(y))
        assert y[0] >= 0.0 and y[1] <= 1.0

    def test_dropout_p0_is_exact_identity(self):
        x = Tensor(np.arange(6.0).reshape(2, 3))
        rng = np.random.default_rng(0)
        assert T.dropout(x, 0.0, rng, training=True) is x
        assert T.dropout(x, 0.5, rng, training=False) is x

    def test_dropout_scales_survivors(self):
        x = Tensor(np.ones((400, 10)))
        out = T.dropout(x, 0.25, np.random.default_rng(1), training=True).data
        kept = out != 0.0
        np.testing.assert_allclose(out[kept], 1.0 / 0.75, rtol=1e-6)
        assert 0.70 < kept.mean() < 0.80

    def test_abs_backward_sign_zero(self, f64):
        x = Tensor([-2.0, 0.0, 3.0], requires_grad=True)
        with Tape() as tape:
            tape.backward(T.sum_axis(T.absval(x)))
        np.testing.assert_array_equal(x.grad, [-1.0, 0.0, 1.0])

    def test_row_broadcast_backward_sums(self, f64):
        x = Tensor(np.ones((3, 2)), requires_grad=True)
        b = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            tape.backward(T.sum_axis(T.add(x, b)))
        np.testing.assert_array_equal(b.grad, [3.0, 3.0])

    def test_unsupported_broadcast_rejected(self):
        with pytest.raises(T.ShapeError):
            T.add(Tensor(np.ones((3, 2))), Tensor(np.ones((4, 2, 2))))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(T.softmax_rows(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_hand_case(self, f64):
        out = T.softmax_rows(Tensor([np.log(2.0), 0.0])).data
        np.testing.assert_allclose(out, [2.0 / 3.0, 1.0 / 3.0], atol=1e-12)

    def test_rows_are_simplex(self, f64):
        rng = np.random.default_rng(5)
        for _ in range(20):
            x = Tensor(rng.normal(scale=10, size=(4, 7)))
            y = T.softmax_rows(x).data
            assert np.all(y > 0) and np.all(y < 1)
            np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)


class TestStructuralOps:
    def test_concat_shape(self):
        a = Tensor(np.ones((3, 2)))
        b = Tensor(np.zeros((3, 2)))
        assert T.concat([a, b], axis=1).shape == (3, 4)

    def test_slice_of_concat_roundtrip(self):
        rng = np.random.default_rng(2)
        a = Tensor(rng.normal(size=(3, 2)).astype(np.float32))
        b = Tensor(rng.normal(size=(3, 4)).astype(np.float32))
        back = T.slice_axis(T.concat([a, b], axis=1), 1, 0, 2)
        np.testing.assert_array_equal(back.data, a.data)

    def test_lookup_zero_row(self):
        table = Tensor(np.zeros((4, 3)))
        np.testing.assert_array_equal(T.lookup(table, np.array([0])).data, [[0, 0, 0]])

    def test_lookup_out_of_range(self):
        with pytest.raises(T.VocabularyError, match="4 rows"):
            T.lookup(Tensor(np.zeros((4, 3))), np.array([4]))

    def test_lookup_backward_scatter_adds(self, f64):
        table = Tensor(np.zeros((4, 2)), requires_grad=True)
        with Tape() as tape:
            tape.backward(T.sum_axis(T.lookup(table, np.array([1, 1, 3]))))
        np.testing.assert_array_equal(table.grad, [[0, 0], [2, 2], [0, 0], [1, 1]])


class TestBackward:
    def test_sum_gives_ones(self, f64):
        x = Tensor(np.zeros((2, 3)), requires_grad=True)
        with Tape() as tape:
            tape.backward(T.sum_axis(x))
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_mean_of_square(self, f64):
        x = Tensor([3.0], requires_grad=True)
        with Tape() as tape:
            tape.backward(T.mean_all(T.mul(x, x)))
        np.testing.assert_array_equal(x.grad, [6.0])

    def test_chain_tanh_matmul_finite_differences(self, f64):
        rng = np.random.default_rng(11)
        a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        err = grad_check(lambda: T.mean_all(T.tanh(T.matmul(a, b))), [a, b])
        assert err < 1e-4

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with Tape() as tape:
            y = T.tanh(x)
            with pytest.raises(ValueError, match="scalar"):
                tape.backward(y)

    def test_accumulation_without_reset(self, f64):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            loss = T.sum_axis(x)
            tape.backward(loss)
            tape.backward(loss)
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])

    def test_forward_independent_of_tape_state(self):
        x = Tensor([[0.3, -0.2]], requires_grad=True)
        bare = T.tanh(x).data
        with Tape():
            taped = T.tanh(x).data
        np.testing.assert_array_equal(bare, taped)

    def test_shared_node_accumulates_fanout(self, f64):
        x = Tensor([2.0], requires_grad=True)
        with Tape() as tape:
            y = T.mul(x, x)
            tape.backward(T.sum_axis(T.add(y, y)))
        np.testing.assert_array_equal(x.grad, [8.0])


class TestDtypeMode:
    def test_engine_switch(self):
        assert Tensor([1.0]).data.dtype == np.float32
        with T.using_dtype(np.float64):
            assert Tensor([1.0]).data.dtype == np.float64
        assert Tensor([1.0]).data.dtype == np.float32

    def test_gradcheck_rejects_float32(self):
        x = Tensor([1.0], requires_grad=True)
        with pytest.raises(RuntimeError, match="float64"):
            grad_check(lambda: T.sum_axis(x), [x])


def test_every_registered_op_passes_gradcheck():
    with T.using_dtype(np.float64):
        for name, err in op_checks(seed=0):
            assert err < 1e-4, f"{name}: {err}"
