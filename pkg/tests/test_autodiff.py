import numpy as np
import pytest

from llmpia import autodiff as ad


def numeric_grad(f, x, step=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + step
        up = f()
        x[idx] = old - step
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * step)
    return g


def check(build, *arrays, tol=1e-7, weights_seed=0):
    """Compare tape gradients of sum(w * build(*leaves)) against central differences."""
    leaves = [ad.Tensor(a, requires_grad=True) for a in arrays]
    out = build(*leaves)
    w = np.random.default_rng(weights_seed).normal(size=out.shape)
    ad.backward(ad.sum(out * w))

    def f():
        return float((build(*[ad.Tensor(a) for a in arrays]).value * w).sum())

    for leaf, arr in zip(leaves, arrays):
        np.testing.assert_allclose(leaf.grad, numeric_grad(f, arr), atol=tol, rtol=1e-6)


rng = np.random.default_rng(0)


class TestElementwise:
    def test_arithmetic(self):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4,)) + 3.0
        check(lambda x, y: (x * y - x / y + 2.0 * x) + y, a, b)

    def test_unary(self):
        a = rng.uniform(0.5, 2.0, size=(5,))
        check(lambda x: ad.exp(x) + ad.log(x) + ad.sqrt(x) + ad.tanh(x), a)

    def test_relu(self):
        a = np.array([-1.0, -0.3, 0.4, 2.0])
        check(ad.relu, a)

    def test_rsub_rdiv(self):
        a = rng.uniform(1.0, 2.0, size=(3,))
        check(lambda x: 1.0 - x + 2.0 / x, a)


class TestHarmonicMean:
    def test_values(self):
        assert float(ad.harmonic_mean(2.0, 2.0).value) == pytest.approx(2.0)
        assert float(ad.harmonic_mean(1.0, 3.0).value) == pytest.approx(1.5)
        assert float(ad.harmonic_mean(0.7, -0.7).value) == 0.0

    def test_gradient(self):
        a, b = rng.uniform(0.5, 2.0, size=(4,)), rng.uniform(0.5, 2.0, size=(4,))
        check(ad.harmonic_mean, a, b)

    def test_guard_zero_gradient(self):
        a = ad.Tensor(np.array([0.5]), requires_grad=True)
        b = ad.Tensor(np.array([-0.5]), requires_grad=True)
        ad.backward(ad.sum(ad.harmonic_mean(a, b)))
        assert a.grad[0] == 0.0 and b.grad[0] == 0.0


class TestShapes:
    def test_sum_mean_axes(self):
        a = rng.normal(size=(2, 3, 4))
        check(lambda x: ad.sum(x, axis=1) + ad.mean(x, axis=(1,)), a)
        check(lambda x: ad.mean(x, axis=-1, keepdims=True) * x, a)

    def test_reshape_transpose(self):
        a = rng.normal(size=(2, 3, 4))
        check(lambda x: ad.reshape(ad.transpose(x, (2, 0, 1)), (4, 6)), a)

    def test_batched_matmul_broadcast(self):
        a, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))
        check(lambda x, y: x @ y, a, b)

    def test_take_rows_scatter(self):
        table = rng.normal(size=(5, 3))
        idx = np.array([[0, 2], [2, 4]])
        check(lambda t: ad.take_rows(t, idx), table)


class TestMaskedOps:
    def test_masked_max_ignores_masked(self):
        a = np.array([[1.0, 9.0, 2.0]])
        mask = np.array([[True, False, True]])
        assert ad.masked_max(a, mask, axis=1).value.tolist() == [2.0]

    def test_masked_max_gradient(self):
        a = rng.normal(size=(3, 4))
        mask = np.array([[1, 1, 0, 1], [1, 0, 0, 0], [1, 1, 1, 1]], dtype=bool)
        check(lambda x: ad.masked_max(x, mask, axis=1), a)

    def test_masked_softmax_rows_sum_to_one(self):
        a = rng.normal(size=(4, 5))
        mask = rng.random((4, 5)) > 0.3
        mask[:, 0] = True
        out = ad.masked_softmax(a, mask).value
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(out[~mask] == 0.0)

    def test_softmax_gradients(self):
        a = rng.normal(size=(3, 4))
        mask = np.array([[1, 1, 0, 1]] * 3, dtype=bool)
        check(lambda x: ad.masked_softmax(x, mask), a)
        check(lambda x: ad.log_softmax(x), a)


class TestComposites:
    def test_layer_norm_gradient(self):
        x, g, b = rng.normal(size=(3, 5)), rng.normal(size=5), rng.normal(size=5)
        check(lambda x_, g_, b_: ad.layer_norm(x_, g_, b_), x, g, b)

    def test_layer_norm_statistics(self):
        x = rng.normal(3.0, 4.0, size=(2, 16))
        y = ad.layer_norm(x, np.ones(16), np.zeros(16)).value
        np.testing.assert_allclose(y.mean(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(y.std(axis=1), 1.0, atol=1e-5)

    def test_l2_normalize(self):
        x = rng.normal(size=(3, 4))
        np.testing.assert_allclose(np.linalg.norm(ad.l2_normalize(x).value, axis=1), 1.0)
        check(ad.l2_normalize, x)

    def test_nll_of_targets(self):
        logits = rng.normal(size=(3, 4))
        targets = np.array([0, 3, 1])
        ls = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        want = -np.mean(ls[np.arange(3), targets])
        assert float(ad.nll_of_targets(logits, targets).value) == pytest.approx(want, abs=1e-12)
        check(lambda x: ad.nll_of_targets(x, targets), logits)


def test_gradients_accumulate_over_shared_leaf():
    x = ad.Tensor(np.array([3.0]), requires_grad=True)
    ad.backward(ad.sum(x * x + x))
    assert x.grad.tolist() == [7.0]


def test_leaf_wraps_without_copy():
    arr = np.zeros(3)
    t = ad.Tensor(arr, requires_grad=True)
    arr[0] = 5.0
    assert t.value[0] == 5.0
