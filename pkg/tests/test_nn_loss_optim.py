"""Loss and optimizer behavior against frozen values and scalar simulations."""
import math

import numpy as np
import pytest

from ssfx.mask import ValidationError
from ssfx.nn import Adam, Tensor, softmax, softmax_cross_entropy

from oracles import max_rel_err, numeric_grad


class TestSoftmaxCrossEntropy:
    def test_equal_logits_give_log_c(self):
        for c in (2, 3, 7, 10):
            loss, _ = softmax_cross_entropy(np.zeros((1, c)), np.array([0]))
            assert loss == pytest.approx(math.log(c), abs=1e-12)

    def test_confident_correct_logit_gives_near_zero_loss(self):
        loss, _ = softmax_cross_entropy(np.array([[1000.0, 0.0]]), np.array([0]))
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_large_logits_stay_finite(self):
        loss, grad = softmax_cross_entropy(np.array([[1e6, -1e6, 0.0]]), np.array([2]))
        assert np.isfinite(loss) and np.isfinite(grad).all()

    def test_gradient_is_softmax_minus_one_hot_over_batch(self):
        rng = np.random.default_rng(4)
        logits = rng.standard_normal((6, 4))
        labels = rng.integers(0, 4, size=6)
        _, grad = softmax_cross_entropy(logits, labels)
        expected = softmax(logits)
        expected[np.arange(6), labels] -= 1.0
        expected /= 6
        np.testing.assert_allclose(grad, expected, atol=1e-15)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        logits = rng.standard_normal((3, 4))
        labels = np.array([1, 3, 0])
        _, grad = softmax_cross_entropy(logits, labels)
        numeric = numeric_grad(lambda: softmax_cross_entropy(logits, labels)[0], logits)
        assert np.abs(grad - numeric).max() < 1e-6

    def test_rows_of_softmax_sum_to_one(self):
        rng = np.random.default_rng(9)
        p = softmax(rng.standard_normal((5, 7)) * 10)
        np.testing.assert_allclose(p.sum(axis=1), np.ones(5), atol=1e-12)

    def test_label_out_of_range_rejected(self):
        with pytest.raises(ValidationError, match="labels must lie in"):
            softmax_cross_entropy(np.zeros((1, 3)), np.array([3]))

    def test_label_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError, match="does not match batch"):
            softmax_cross_entropy(np.zeros((2, 3)), np.array([0, 1, 2]))


class TestAdam:
    def test_first_step_moves_against_gradient_sign(self):
        p = Tensor(np.array([1.0, -2.0]))
        opt = Adam([("p", p)], learning_rate=0.01)
        p.add_grad(np.array([0.5, -0.25]))
        opt.step()
        # with fresh moments the update direction is -lr * sign(g), up to eps
        np.testing.assert_allclose(p.data, [1.0 - 0.01, -2.0 + 0.01], rtol=1e-6)

    def test_quadratic_descent_is_monotone(self):
        p = Tensor(np.array([1.0]))
        opt = Adam([("p", p)], learning_rate=0.1)
        seen = [abs(p.data[0])]
        for _ in range(3):
            p.zero_grad()
            p.add_grad(2.0 * p.data)  # d/dx x^2
            opt.step()
            seen.append(abs(p.data[0]))
        assert all(b < a for a, b in zip(seen, seen[1:]))

    def test_zero_grad_zero_decay_leaves_params_unchanged(self):
        p = Tensor(np.array([3.0, -1.0]))
        opt = Adam([("p", p)], learning_rate=0.1, weight_decay=0.0)
        opt.step()
        np.testing.assert_array_equal(p.data, [3.0, -1.0])

    def test_decay_shrinks_before_update(self):
        p = Tensor(np.array([10.0]))
        opt = Adam([("p", p)], learning_rate=0.1, weight_decay=0.5)
        opt.step()  # gradient is zero, so only the shrink applies
        np.testing.assert_allclose(p.data, [10.0 * (1 - 0.1 * 0.5)])

    def test_matches_scalar_reference_simulation(self):
        # independent scalar re-implementation of the update rule
        lr, wd, b1, b2, eps = 0.02, 0.1, 0.9, 0.999, 1e-8
        x = 0.7
        m = v = 0.0
        trajectory = []
        for t in range(1, 6):
            g = math.sin(t) + 2 * x
            x *= 1 - lr * wd
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            x -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
            trajectory.append(x)

        p = Tensor(np.array([0.7]))
        opt = Adam([("p", p)], learning_rate=lr, weight_decay=wd, beta1=b1, beta2=b2, eps=eps)
        got = []
        for t in range(1, 6):
            p.zero_grad()
            p.add_grad(np.array([math.sin(t) + 2 * p.data[0]]))
            opt.step()
            got.append(p.data[0])
        np.testing.assert_allclose(got, trajectory, rtol=1e-12)

    def test_seeded_runs_are_bit_identical(self):
        def run():
            rng = np.random.default_rng(42)
            p = Tensor(rng.standard_normal(8))
            opt = Adam([("p", p)], learning_rate=0.01, weight_decay=5e-4)
            for _ in range(25):
                p.zero_grad()
                p.add_grad(rng.standard_normal(8))
                opt.step()
            return p.data.tobytes()

        assert run() == run()

    def test_invalid_hyperparameters_rejected(self):
        p = Tensor(np.zeros(1))
        with pytest.raises(ValidationError, match="learning rate"):
            Adam([("p", p)], learning_rate=0.0)
        with pytest.raises(ValidationError, match="weight decay"):
            Adam([("p", p)], learning_rate=0.1, weight_decay=-1.0)
        with pytest.raises(ValidationError, match="betas"):
            Adam([("p", p)], learning_rate=0.1, beta1=1.0)


class TestTensor:
    def test_rejects_more_than_four_dims(self):
        with pytest.raises(ValidationError, match="4 dimensions"):
            Tensor(np.zeros((1, 1, 1, 1, 1)))

    def test_grad_is_lazy_and_accumulates(self):
        t = Tensor(np.zeros(3))
        assert t.grad is None
        t.add_grad(np.ones(3))
        t.add_grad(np.ones(3))
        np.testing.assert_array_equal(t.grad, [2, 2, 2])
        t.zero_grad()
        assert t.grad is None

    def test_grad_shape_checked(self):
        t = Tensor(np.zeros(3))
        with pytest.raises(ValidationError, match="does not match"):
            t.add_grad(np.ones(4))
