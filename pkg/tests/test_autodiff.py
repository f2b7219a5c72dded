"""Reverse-mode autodiff: every primitive against central finite differences."""

import math

import numpy as np
import pytest

from kleinvae import autodiff as ad
from kleinvae.autodiff import NonFiniteGradient, Parameter, PlateauState, ShapeError, Tensor


def fd_check(build, value, h=1e-6, rtol=1e-4):
    """Compare the autodiff gradient of ``build(param)`` with central differences."""
    p = Parameter(np.array(value, dtype=float), "x")
    ad.backward(build(p))
    got = p.grad.copy()
    want = np.zeros_like(p.value)
    for idx in np.ndindex(p.value.shape):
        orig = p.value[idx]
        p.value[idx] = orig + h
        up = float(build(p).value)
        p.value[idx] = orig - h
        down = float(build(p).value)
        p.value[idx] = orig
        want[idx] = (up - down) / (2 * h)
    scale = np.maximum(np.abs(want), 1e-3)
    assert np.max(np.abs(got - want) / scale) < rtol, (got, want)


@pytest.fixture
def X(rng):
    return rng.standard_normal((4, 3))


class TestPrimitiveGradients:
    def test_matmul_left_and_right(self, rng, X):
        W = rng.standard_normal((3, 2))
        fd_check(lambda p: ad.sum(ad.mul(ad.matmul(p, W), ad.matmul(p, W))), X)
        fd_check(lambda p: ad.sum(ad.sigmoid(ad.matmul(Tensor(X), p))), W)

    def test_bias_add(self, rng, X):
        b = rng.standard_normal(3)
        fd_check(lambda p: ad.sum(ad.softplus(ad.add(Tensor(X), p))), b)

    def test_elementwise(self, X):
        for f in (ad.sigmoid, ad.softplus, ad.exp, ad.neg, lambda t: ad.scale(t, -2.5),
                  lambda t: ad.add_const(t, 3.0), lambda t: ad.leaky_relu(t, 0.01)):
            fd_check(lambda p: ad.sum(ad.mul(f(p), f(p))), X)

    def test_log(self, rng):
        fd_check(lambda p: ad.sum(ad.log(p)), rng.uniform(0.5, 2.0, (3, 2)))

    def test_sub_mul(self, rng, X):
        Y = rng.standard_normal(X.shape)
        fd_check(lambda p: ad.sum(ad.mul(ad.sub(p, Tensor(Y)), p)), X)

    def test_reductions(self, X):
        fd_check(lambda p: ad.sum(ad.exp(ad.sum(p, axis=0))), X)
        fd_check(lambda p: ad.sum(ad.exp(ad.mean(p, axis=1))), X)
        fd_check(lambda p: ad.mean(ad.mul(p, p)), X)

    def test_bce(self, rng, X):
        y = rng.uniform(0, 1, X.shape)
        fd_check(lambda p: ad.sum(ad.bce_with_logits(p, y)), X)

    def test_mod_periodic_off_boundary(self, rng):
        v = rng.uniform(-3, 3, 6)
        v = v[np.abs(np.mod(v, 1.0) - 0.5) < 0.45]
        fd_check(lambda p: ad.sum(ad.mul(ad.mod_periodic(p, 1.0), ad.mod_periodic(p, 1.0))), v)

    def test_select_by_threshold(self, rng):
        v = rng.uniform(0, 2, 8)
        v = v[np.abs(v - 1.0) > 0.05]
        fd_check(lambda p: ad.sum(ad.select_by_threshold(p, 1.0, ad.mul(p, p), ad.scale(p, 3.0))), v)

    def test_column_and_stack(self, X):
        fd_check(lambda p: ad.sum(ad.exp(ad.stack_columns([ad.column(p, 2), ad.column(p, 0)]))), X)

    def test_operator_sugar(self, X):
        fd_check(lambda p: ad.sum(ad.exp(ad.scale((p * p - 1.0) * p - p, 0.1))), X)
        fd_check(lambda p: ad.sum(ad.exp(p[:, 1])), X)


class TestComposite:
    def test_two_layer_mlp(self, rng):
        x = rng.standard_normal((5, 4))
        W2 = rng.standard_normal((6, 2))

        def build(W1):
            h = ad.leaky_relu(ad.matmul(Tensor(x), W1))
            return ad.mean(ad.softplus(ad.matmul(h, W2)))

        fd_check(build, rng.standard_normal((4, 6)))

    def test_shared_subexpression_visited_once(self, rng):
        v = rng.standard_normal(5)
        fd_check(lambda p: ad.sum(ad.add(ad.mul(p, p), ad.mul(p, p))), v)

    def test_repeat_backward_accumulates(self):
        p = Parameter(np.array([2.0]), "p")
        loss = ad.sum(ad.mul(p, p))
        ad.backward(loss)
        ad.backward(loss)
        assert p.grad[0] == 8.0
        p.zero_grad()
        assert p.grad[0] == 0.0

    def test_deep_chain_no_recursion_limit(self):
        p = Parameter(np.array([1.0]), "p")
        t = p
        for _ in range(5000):
            t = ad.add_const(t, 0.0)
        ad.backward(ad.sum(t))
        assert p.grad[0] == 1.0


class TestErrors:
    def test_matmul_shape(self):
        with pytest.raises(ShapeError):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_no_general_broadcasting(self):
        with pytest.raises(ShapeError):
            ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 1))))
        with pytest.raises(ShapeError):
            ad.mul(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))

    def test_scalar_loss_required(self):
        with pytest.raises(ShapeError):
            ad.backward(Tensor(np.ones(2)))

    def test_nonfinite_gradient_names_parameter(self):
        p = Parameter(np.array([0.0]), "encoder.W0")
        with np.errstate(divide="ignore"):
            ad.backward(ad.sum(ad.log(p)))
        with pytest.raises(NonFiniteGradient, match="encoder.W0"):
            ad.adam_step([p], 1e-3)

    def test_leaky_relu_values(self):
        t = ad.leaky_relu(Tensor(np.array([-1.0, 2.0])), 0.01)
        np.testing.assert_array_equal(t.value, [-0.01, 2.0])


class TestAdam:
    def test_first_step_is_lr_times_sign(self):
        p = Parameter(np.array([1.0, -1.0, 3.0]), "p")
        ad.backward(ad.sum(ad.mul(p, Tensor(np.array([2.0, -0.5, 0.0])))))
        ad.adam_step([p], 0.1)
        np.testing.assert_allclose(p.value, [0.9, -0.9, 3.0], atol=1e-7)
        assert np.all(p.grad == 0)

    def test_matches_reference_implementation(self, rng):
        v = rng.standard_normal(4)
        p = Parameter(v.copy(), "p")
        m = np.zeros(4)
        s = np.zeros(4)
        ref = v.copy()
        for t in range(1, 30):
            g = 2 * ref
            m = 0.9 * m + 0.1 * g
            s = 0.999 * s + 0.001 * g * g
            ref = ref - 0.05 * (m / (1 - 0.9 ** t)) / (np.sqrt(s / (1 - 0.999 ** t)) + 1e-8)
            ad.backward(ad.sum(ad.mul(p, p)))
            ad.adam_step([p], 0.05)
        np.testing.assert_allclose(p.value, ref, rtol=1e-12)

    def test_minimises_quadratic(self):
        p = Parameter(np.array([5.0, -3.0]), "p")
        for _ in range(2000):
            ad.backward(ad.sum(ad.mul(p, p)))
            ad.adam_step([p], 0.05)
        assert np.all(np.abs(p.value) < 1e-2)


class TestPlateau:
    def test_constant_metric_reduces_on_eleventh(self):
        s = PlateauState(1e-2, 0.99, 10)
        lrs = [ad.reduce_lr_on_plateau(s, 1.0) for _ in range(11)]
        assert lrs[:10] == [1e-2] * 10
        assert lrs[10] == pytest.approx(0.99e-2)
        assert s.reductions == [11]

    def test_counter_resets(self):
        s = PlateauState(1.0, 0.5, 2)
        for m in [3, 3, 3, 2, 2, 2, 2, 2]:
            ad.reduce_lr_on_plateau(s, m)
        assert s.reductions == [3, 6, 8]
        assert s.lr == 0.125

    def test_improvement_blocks_reduction(self):
        s = PlateauState(1.0, 0.5, 3)
        for m in range(20, 0, -1):
            ad.reduce_lr_on_plateau(s, m)
        assert s.reductions == [] and s.lr == 1.0

    def test_nonfinite_metric(self):
        with pytest.raises(ValueError):
            ad.reduce_lr_on_plateau(PlateauState(1.0), math.nan)
