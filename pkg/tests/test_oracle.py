import numpy as np
import pytest

from margin_forge.errors import InvalidInputError
from margin_forge.margin_losses import MarginMode, MarginParams, mm_loss, softmax_cross_entropy
from margin_forge.oracle import (
    FDSpec,
    finite_diff_gradient,
    max_relative_error,
    near_kink,
    reference_cross_entropy,
    reference_loss,
)


class TestFiniteDifferences:
    def test_linear(self):
        c = np.array([0.5, -2.0, 3.25])
        g = finite_diff_gradient(lambda x: float(c @ x), np.array([1.0, 2.0, -1.0]))
        np.testing.assert_allclose(g, c, rtol=1e-9)

    def test_squared_norm(self):
        g = finite_diff_gradient(lambda x: float(x @ x), np.array([1.0, 2.0]))
        np.testing.assert_allclose(g, [2.0, 4.0], atol=1e-8)

    def test_constant(self):
        g = finite_diff_gradient(lambda x: 3.0, np.zeros(4))
        np.testing.assert_array_equal(g, np.zeros(4))

    def test_vectorized_agrees(self):
        f = lambda x: float(np.sin(x).sum() + x[0] * x[1])
        fv = lambda P: np.sin(P).sum(axis=1) + P[:, 0] * P[:, 1]
        x = np.array([0.3, -0.8, 1.1])
        np.testing.assert_array_equal(finite_diff_gradient(f, x),
                                      finite_diff_gradient(fv, x, vectorized=True))

    def test_non_finite_names_coordinate(self):
        f = lambda x: np.log(x[1])
        with np.errstate(invalid="ignore"), pytest.raises(InvalidInputError, match=r"coordinate 1 \(-h"):
            finite_diff_gradient(f, np.array([1.0, 5e-4]), FDSpec(step=1e-3))


def test_max_relative_error_uses_norm_scale():
    assert max_relative_error([1.0, 1e-9], [1.0, 2e-9]) == pytest.approx(1e-9)
    assert max_relative_error([0.0, 0.0], [0.0, 0.0]) == 0.0


def test_near_kink():
    assert near_kink([1.0, 1.00001, 0.0], 0)
    assert near_kink([3.0, 1.0, 1.00001], 0)
    assert not near_kink([3.0, 1.0, 0.0], 0)


class TestReferenceLoss:
    def test_agrees_with_kernel_on_random_inputs(self):
        rng = np.random.default_rng(2024)
        worst = 0.0
        for i in range(10_000):
            K = (2, 3, 10)[i % 3]
            z = rng.uniform(-5, 5, K)
            y = int(rng.integers(K))
            counts = tuple(int(n) for n in rng.integers(1, 1000, K))
            params = MarginParams(delta_neg=rng.uniform(0, 2), beta=rng.uniform(0.5, 2),
                                  class_aware=bool(i % 2))
            ref = reference_loss(z, y, params, counts)
            got = mm_loss(z, y, params, counts).value
            worst = max(worst, abs(got - ref) / abs(ref))
        assert worst < 1e-12

    def test_identity_case(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            z = rng.uniform(-3, 3, 4)
            y = int(rng.integers(4))
            ref = reference_loss(z, y, MarginParams(delta_neg=30.0, beta=1.0))
            assert abs(ref - reference_cross_entropy(z, y)) < 1e-9
            assert reference_cross_entropy(z, y) == pytest.approx(softmax_cross_entropy(z, y), rel=1e-13)

    def test_none_mode(self):
        z = [0.2, 1.4, -0.3]
        assert reference_loss(z, 2, MarginParams(margin_mode=MarginMode.NONE)) == pytest.approx(
            reference_cross_entropy(z, 2), rel=1e-15)

    @pytest.mark.parametrize("c", [-100.0, 1.0, 7.3])
    def test_translation(self, c):
        z = np.array([0.4, -2.0, 1.3])
        assert reference_loss(z + c, 0, MarginParams()) == pytest.approx(
            reference_loss(z, 0, MarginParams()), abs=1e-12)

    def test_rejects_single_class(self):
        with pytest.raises(InvalidInputError):
            reference_loss([0.0], 0, MarginParams())
