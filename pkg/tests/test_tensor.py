import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tstransfer import tensor as T
from tstransfer.errors import ContractError, ShapeError
from tstransfer.tensor import Tensor, backward, grad_check


def t(data, grad=False):
    return Tensor(np.asarray(data, dtype=np.float32), requires_grad=grad)


def finite_diff(f, x, h=1e-3):
    """Central differences of scalar f at x, evaluated in float64."""
    x64 = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x64)
    flat, oflat = x64.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(Tensor(x64)).item()
        flat[i] = orig - h
        fm = f(Tensor(x64)).item()
        flat[i] = orig
        oflat[i] = (fp - fm) / (2 * h)
    return out


def away_from_zero(rng, shape, margin=0.05):
    x = rng.standard_normal(shape).astype(np.float32)
    x = np.where(np.abs(x) < margin, np.sign(x) * margin + x, x)
    return x


class TestMatmul:
    def test_identity(self):
        a = t([[1, 2], [3, 4]])
        out = T.matmul(a, t(np.eye(2)))
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_zero(self):
        out = T.matmul(t([[1, 2], [3, 4]]), t(np.zeros((2, 2))))
        np.testing.assert_array_equal(out.data, np.zeros((2, 2)))

    def test_hand_computed(self):
        # brute-force dot products: row . col
        out = T.matmul(t([[1, 2], [3, 4]]), t([[5], [6]]))
        np.testing.assert_array_equal(out.data, [[17], [39]])

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            T.matmul(t(np.ones((2, 3))), t(np.ones((2, 2))))

    def test_batched_matches_loop(self, rng):
        a = rng.standard_normal((3, 4, 5)).astype(np.float32)
        b = rng.standard_normal((3, 5, 2)).astype(np.float32)
        out = T.matmul(t(a), t(b)).data
        for i in range(3):
            np.testing.assert_allclose(out[i], a[i] @ b[i], rtol=1e-6)


class TestSoftmax:
    def test_symmetry(self):
        np.testing.assert_allclose(T.softmax(t([0.0, 0.0])).data, [0.5, 0.5])

    def test_stability_under_max_subtraction(self):
        np.testing.assert_allclose(T.softmax(t([1000.0, 1000.0])).data, [0.5, 0.5])

    def test_closed_form(self):
        # e^0 / (e^0 + 3) = 0.25
        out = T.softmax(t([0.0, math.log(3.0)])).data
        np.testing.assert_allclose(out, [0.25, 0.75], atol=1e-6)

    @given(st.lists(st.floats(-40, 40), min_size=2, max_size=16))
    def test_sums_to_one_and_positive(self, vals):
        out = T.softmax(t(vals)).data
        assert abs(out.sum() - 1.0) <= 1e-6
        assert (out > 0).all()


class TestRmsNorm:
    def test_unit_input(self):
        out = T.rms_norm(t([1.0, 1.0, 1.0, 1.0]), t(np.ones(4)), eps=1e-12)
        np.testing.assert_allclose(out.data, np.ones(4), atol=1e-6)

    def test_zero_input(self):
        out = T.rms_norm(t([0.0, 0.0]), t(np.ones(2)), eps=1e-6)
        np.testing.assert_array_equal(out.data, [0.0, 0.0])

    def test_hand_computed(self):
        # mean(x^2) = (9 + 16) / 2 = 12.5
        out = T.rms_norm(t([3.0, 4.0]), t(np.ones(2)), eps=1e-12).data
        np.testing.assert_allclose(out, [3 / math.sqrt(12.5), 4 / math.sqrt(12.5)], atol=1e-6)
        np.testing.assert_allclose(out, [0.8485, 1.1314], atol=1e-4)


class TestBackward:
    def test_sum_gives_ones(self):
        x = t(np.arange(6).reshape(2, 3), grad=True)
        backward(T.tsum(x))
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_sum_of_squares_matches_finite_difference(self):
        x = t([3.0], grad=True)
        backward(T.tsum(T.mul(x, x)))
        numeric = finite_diff(lambda v: T.tsum(T.mul(v, v)), [3.0])
        np.testing.assert_allclose(x.grad, [6.0], rtol=1e-6)
        np.testing.assert_allclose(x.grad, numeric, rtol=1e-4)

    def test_product_gradients(self):
        a, b = t([2.0], grad=True), t([5.0], grad=True)
        backward(T.tsum(T.mul(a, b)))
        np.testing.assert_allclose(a.grad, [5.0])
        np.testing.assert_allclose(b.grad, [2.0])

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ContractError):
            backward(t([1.0, 2.0], grad=True))

    def test_accumulation_equals_sum_of_single_uses(self, rng):
        x0 = rng.standard_normal(5).astype(np.float32)
        # y = sum(x * x) uses x twice
        x = t(x0, grad=True)
        backward(T.tsum(T.mul(x, x)))
        twice = x.grad.copy()
        # single-use each: d/dx sum(x * c) = c with c = x0 held constant
        xa = t(x0, grad=True)
        backward(T.tsum(T.mul(xa, t(x0))))
        xb = t(x0, grad=True)
        backward(T.tsum(T.mul(t(x0), xb)))
        np.testing.assert_allclose(twice, xa.grad + xb.grad, rtol=1e-6)

    def test_deterministic(self, rng):
        x0 = rng.standard_normal((4, 4)).astype(np.float32)
        outs = []
        for _ in range(2):
            x = t(x0, grad=True)
            loss = T.mean(T.relu(T.matmul(x, x)))
            backward(loss)
            outs.append((loss.data.copy(), x.grad.copy()))
        np.testing.assert_array_equal(outs[0][0], outs[1][0])
        np.testing.assert_array_equal(outs[0][1], outs[1][1])


class TestGradCheck:
    def test_sum_is_exact(self, rng):
        r = grad_check(T.tsum, t(rng.standard_normal(7)), h=1e-3, tol=1e-3)
        assert r.passed and r.max_rel_error <= 1e-9

    def test_softmax_onehot(self, rng):
        onehot = np.zeros(8, dtype=np.float32)
        onehot[3] = 1.0
        r = grad_check(
            lambda x: T.tsum(T.mul(T.softmax(x), Tensor(onehot.astype(x.data.dtype)))),
            t(rng.standard_normal(8)),
            h=1e-3,
            tol=1e-4,
        )
        assert r.passed, str(r)

    def test_reports_nan_coordinate(self):
        def bad(x):
            y = T.tsum(x)
            y.data = np.asarray(np.nan, dtype=y.data.dtype)
            return y

        r = grad_check(bad, t([1.0, 2.0]))
        assert not r.passed and r.has_nan and r.worst_index is not None


# every differentiable op, checked against central finite differences;
# all random constants are drawn up front so the oracle sees the same function
def _op_cases(rng):
    c = t(away_from_zero(rng, (3, 4)))
    idx = np.array([0, 2, 1, 2])
    w = t(rng.standard_normal((4, 2)).astype(np.float32))
    ct = t(np.ones((4, 3)))
    c_flat = t(rng.standard_normal(12).astype(np.float32))
    c_cat = t(rng.standard_normal((6, 4)).astype(np.float32))
    c_emb = t(rng.standard_normal((4, 4)).astype(np.float32))
    gain = t(np.array([1.1, 0.9, 1.2, 0.8]))
    return {
        "add": (lambda x: T.tsum(T.add(x, c)), (3, 4)),
        "add_broadcast": (lambda x: T.tsum(T.add(c, x)), (4,)),
        "sub": (lambda x: T.tsum(T.sub(x, c)), (3, 4)),
        "mul": (lambda x: T.tsum(T.mul(x, c)), (3, 4)),
        "scale": (lambda x: T.tsum(T.scale(x, -1.7)), (3, 4)),
        "relu": (lambda x: T.tsum(T.relu(x)), (3, 4)),
        "gelu": (lambda x: T.tsum(T.gelu(x)), (3, 4)),
        "matmul": (lambda x: T.tsum(T.matmul(x, w)), (3, 4)),
        "transpose": (lambda x: T.tsum(T.mul(T.transpose(x, (1, 0)), ct)), (3, 4)),
        "reshape": (lambda x: T.tsum(T.mul(T.reshape(x, (12,)), c_flat)), (3, 4)),
        "concatenate": (lambda x: T.tsum(T.mul(T.concatenate([x, x], axis=0), c_cat)), (3, 4)),
        "embedding": (lambda x: T.tsum(T.mul(T.embedding(x, idx), c_emb)), (3, 4)),
        "mean": (lambda x: T.mean(T.mul(x, c)), (3, 4)),
        "sum": (lambda x: T.tsum(T.mul(x, c)), (3, 4)),
        "softmax": (lambda x: T.tsum(T.mul(T.softmax(x), c)), (3, 4)),
        "rms_norm": (lambda x: T.tsum(T.mul(T.rms_norm(x, gain, 1e-6), c)), (3, 4)),
        "cross_entropy": (lambda x: T.cross_entropy(x, np.array([1, 3, 0])), (3, 4)),
    }


@pytest.mark.parametrize("name", sorted(_op_cases(np.random.default_rng(0))))
def test_grad_check_every_op(name):
    rng = np.random.default_rng(99)
    for trial in range(5):
        cases = _op_cases(rng)
        f, shape = cases[name]
        x = away_from_zero(rng, shape)
        r = grad_check(f, Tensor(x), h=1e-3, tol=1e-3)
        assert r.passed, f"{name} trial {trial}: {r}"


def test_rms_norm_gain_gradient(rng):
    x = t(away_from_zero(rng, (3, 4)))

    def f(gain):
        return T.tsum(T.rms_norm(x, gain, 1e-6))

    r = grad_check(f, Tensor(rng.standard_normal(4).astype(np.float32)), h=1e-3, tol=1e-3)
    assert r.passed, str(r)


def test_concatenate_axis1(rng):
    a = t(rng.standard_normal((2, 3)).astype(np.float32), grad=True)
    b = t(rng.standard_normal((2, 2)).astype(np.float32), grad=True)
    out = T.concatenate([a, b], axis=1)
    assert out.shape == (2, 5)
    backward(T.tsum(out))
    np.testing.assert_array_equal(a.grad, np.ones((2, 3)))
    np.testing.assert_array_equal(b.grad, np.ones((2, 2)))


def test_embedding_out_of_range():
    table = t(np.ones((3, 2)), grad=True)
    with pytest.raises(ContractError):
        T.embedding(table, np.array([0, 3]))


def test_cross_entropy_all_masked():
    with pytest.raises(ContractError):
        T.cross_entropy(t(np.zeros((2, 3))), np.array([0, 1]), np.array([False, False]))


def test_forward_values_finite_on_finite_inputs(rng):
    x = t(rng.standard_normal((4, 8)) * 30)
    for out in (T.softmax(x), T.gelu(x), T.rms_norm(x, t(np.ones(8)), 1e-6)):
        assert np.isfinite(out.data).all()
