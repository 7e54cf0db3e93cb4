"""Tests for gradient computation and the training loop."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from pnet.activation import P_MAX, P_MIN
from pnet.data import Dataset, gen_square
from pnet.network import PNetwork, forward, forward_batch, init_network
from pnet.training import (
    UPDATE_MODES,
    TrainConfig,
    TrainingDivergedError,
    TrainLog,
    backprop,
    backprop_batch,
    classification_error,
    mse,
    train,
)


def single_neuron_net() -> PNetwork:
    # One input, one p=2 neuron with bias 0 and weight 1, lambda 1:
    # a = x, v = x/3.
    return PNetwork(
        layer_sizes=[1, 1],
        weights=[np.array([[0.0, 1.0]])],
        p_values=[np.array([2.0])],
        lam=1.0,
        head="regression",
    )


def toy_regression(n=30, seed=0) -> Dataset:
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, (n, 1))
    return Dataset(x, x**2, "regression")


class TestMse:
    def test_single_sample(self):
        assert mse(np.array([[1.0]]), np.array([[0.0]])) == 0.5

    def test_zero_when_equal(self):
        y = np.random.default_rng(0).standard_normal((5, 3))
        assert mse(y, y) == 0.0

    def test_two_sample_example(self):
        assert mse(np.array([[1.0], [0.0]]), np.array([[0.0], [2.0]])) == 1.25

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            mse(np.zeros((2, 1)), np.zeros((3, 1)))
        with pytest.raises(ValueError):
            mse(np.zeros(3), np.zeros(3))


class TestBackprop:
    def test_single_neuron_hand_values(self):
        net = single_neuron_net()
        trace = forward(net, np.array([3.0]))
        assert_allclose(trace.outputs[-1], [[1.0]], rtol=0, atol=1e-15)
        wg, pg = backprop(net, trace, np.array([0.0]))
        # delta = (1 - 0) * dv_da(v=1) = 1/3; dE/dw = delta * x = 1;
        # dE/dbias = delta; dE/dp = (1 - 0) * dv_dp(v=1) = -1/3.
        assert_allclose(wg[0], np.array([[1.0 / 3.0, 1.0]]), rtol=0, atol=1e-12)
        assert_allclose(pg[0], np.array([-1.0 / 3.0]), rtol=0, atol=1e-12)

    def test_zero_gradients_at_perfect_fit(self):
        net = init_network([2, 3, 2], "regression", lam=1.0, initial_p=2.5, seed=1)
        X = np.random.default_rng(1).standard_normal((4, 2))
        trace = forward_batch(net, X)
        wg, pg = backprop_batch(net, trace, trace.outputs[-1])
        for g in wg:
            assert_array_equal(g, np.zeros_like(g))
        for g in pg:
            assert_array_equal(g, np.zeros_like(g))

    def test_classification_zero_error_gives_zero_gradients(self):
        net = init_network([2, 3, 2], "classification", lam=1.0, initial_p=2.5, seed=1)
        X = np.random.default_rng(2).standard_normal((4, 2))
        trace = forward_batch(net, X)
        wg, _ = backprop_batch(net, trace, trace.outputs[-1])
        for g in wg:
            assert_array_equal(g, np.zeros_like(g))

    def test_batch_gradient_is_mean_of_singles(self):
        net = init_network([2, 4, 1], "regression", lam=1.0, initial_p=2.5, seed=3)
        rng = np.random.default_rng(3)
        X = rng.standard_normal((5, 2))
        Y = rng.standard_normal((5, 1))
        trace = forward_batch(net, X)
        wg, pg = backprop_batch(net, trace, Y)
        singles_w = [np.zeros_like(g) for g in wg]
        singles_p = [np.zeros_like(g) for g in pg]
        for i in range(5):
            ti = forward(net, X[i])
            wgi, pgi = backprop(net, ti, Y[i])
            for k in range(len(wg)):
                singles_w[k] += wgi[k] / 5.0
                singles_p[k] += pgi[k] / 5.0
        for k in range(len(wg)):
            assert_allclose(wg[k], singles_w[k], rtol=1e-10, atol=1e-14)
            assert_allclose(pg[k], singles_p[k], rtol=1e-10, atol=1e-14)

    def test_multi_row_trace_rejected(self):
        net = single_neuron_net()
        trace = forward_batch(net, np.array([[1.0], [2.0]]))
        with pytest.raises(ValueError):
            backprop(net, trace, np.array([[0.0], [0.0]]))

    def test_compute_p_flag(self):
        net = init_network([2, 3, 1], "regression", lam=1.0, initial_p=2.5, seed=4)
        X = np.random.default_rng(4).standard_normal((3, 2))
        trace = forward_batch(net, X)
        _, pg = backprop_batch(net, trace, np.zeros((3, 1)), compute_p=False)
        assert all(g is None for g in pg)


class TestTrainConfig:
    def test_valid_modes(self):
        for mode in UPDATE_MODES:
            cfg = TrainConfig(0.1, 0.0, 10, 1e-3, update=mode)
            assert cfg.update == mode

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(0.0, 0.0, 10, 1e-3)
        with pytest.raises(ValueError):
            TrainConfig(0.1, -1.0, 10, 1e-3)
        with pytest.raises(ValueError):
            TrainConfig(0.1, 0.0, 0, 1e-3)
        with pytest.raises(ValueError):
            TrainConfig(0.1, 0.0, 10, 0.0)
        with pytest.raises(ValueError):
            TrainConfig(0.1, 0.0, 10, 1e-3, inner_iters=0)
        with pytest.raises(ValueError):
            TrainConfig(0.1, 0.0, 10, 1e-3, seed=-1)
        with pytest.raises(ValueError):
            TrainConfig(0.1, 0.0, 10, 1e-3, seed=1.5)
        with pytest.raises(ValueError):
            TrainConfig(0.1, 0.0, 10, 1e-3, update="online")


class TestTrainBatch:
    def test_single_neuron_one_step(self):
        net = single_neuron_net()
        data = Dataset(np.array([[3.0]]), np.array([[0.0]]), "regression")
        cfg = TrainConfig(alpha_w=0.1, alpha_p=0.0, max_iters=1, max_error=1e-300)
        trained, log = train(net, data, cfg)
        # dE/dw_11 = 1, so one step of size 0.1 moves the weight 1 -> 0.9.
        assert_allclose(trained.weights[0][0, 1], 0.9, rtol=0, atol=1e-12)
        assert len(log.errors) == 1

    def test_infinitesimal_step_decreases_error(self):
        net = init_network([1, 4, 1], "regression", lam=1.0, initial_p=2.5, seed=5)
        data = toy_regression(seed=5)
        e0 = mse(forward_batch(net, data.inputs).outputs[-1], data.targets)
        cfg = TrainConfig(alpha_w=1e-8, alpha_p=1e-8, max_iters=1, max_error=1e-300)
        _, log = train(net, data, cfg)
        assert log.errors[0] < e0

    def test_frozen_p_is_bit_identical(self):
        net = init_network([1, 4, 1], "regression", lam=1.0, initial_p=2.5, seed=6)
        before = [pk.copy() for pk in net.p_values]
        cfg = TrainConfig(alpha_w=0.05, alpha_p=0.0, max_iters=20, max_error=1e-300)
        trained, log = train(net, toy_regression(seed=6), cfg)
        for pk_before, pk_after in zip(before, trained.p_values):
            assert_array_equal(pk_before, pk_after)
        assert_array_equal(log.p_history, np.tile(log.p_history[0], (len(log.errors), 1)))

    def test_log_length_and_early_stop(self):
        net = init_network([1, 4, 1], "regression", lam=1.0, initial_p=2.5, seed=7)
        data = toy_regression(seed=7)
        cfg = TrainConfig(alpha_w=0.05, alpha_p=0.0, max_iters=8, max_error=1e-300)
        _, log_a = train(net, data, cfg)
        assert len(log_a.errors) == 8
        # Stop as soon as the error dips below a threshold between two
        # consecutive logged errors: the log must end exactly there.
        drops = np.nonzero(np.diff(log_a.errors) < 0)[0]
        assert drops.size > 0
        t = int(drops[0])
        thresh = float((log_a.errors[t] + log_a.errors[t + 1]) / 2.0)
        cfg_b = TrainConfig(alpha_w=0.05, alpha_p=0.0, max_iters=8, max_error=thresh)
        _, log_b = train(net, data, cfg_b)
        first_below = int(np.nonzero(log_a.errors < thresh)[0][0])
        assert len(log_b.errors) == first_below + 1
        assert_array_equal(log_b.errors, log_a.errors[: first_below + 1])

    def test_p_stays_clamped(self):
        net = init_network([1, 4, 1], "regression", lam=1.0, initial_p=2.0, seed=8)
        cfg = TrainConfig(alpha_w=0.01, alpha_p=1e9, max_iters=5, max_error=1e-300)
        trained, log = train(net, toy_regression(seed=8), cfg)
        for pk in trained.p_values:
            assert np.all(pk >= P_MIN) and np.all(pk <= P_MAX)
        assert np.all(log.p_history >= P_MIN) and np.all(log.p_history <= P_MAX)

    def test_divergence_raises(self):
        net = init_network([1, 4, 1], "regression", lam=1.0, initial_p=2.0, seed=9)
        cfg = TrainConfig(alpha_w=1e12, alpha_p=0.0, max_iters=50, max_error=1e-300)
        with np.errstate(over="ignore"), pytest.raises(TrainingDivergedError):
            train(net, toy_regression(seed=9), cfg)

    def test_determinism(self):
        net = init_network([1, 4, 1], "regression", lam=1.0, initial_p=2.5, seed=10)
        data = toy_regression(seed=10)
        cfg = TrainConfig(alpha_w=0.05, alpha_p=10.0, max_iters=10, max_error=1e-300)
        t1, l1 = train(net, data, cfg)
        t2, l2 = train(net, data, cfg)
        assert_array_equal(l1.errors, l2.errors)
        assert_array_equal(l1.p_history, l2.p_history)
        for Wa, Wb in zip(t1.weights, t2.weights):
            assert_array_equal(Wa, Wb)

    def test_task_mismatch_rejected(self):
        net = init_network([1, 4, 2], "classification", lam=1.0, initial_p=2.0, seed=0)
        with pytest.raises(ValueError):
            train(net, toy_regression(), TrainConfig(0.1, 0.0, 5, 1e-3))

    def test_p_labels_and_history_shape(self):
        net = init_network([1, 4, 2], "regression", lam=1.0, initial_p=2.0, seed=11)
        cfg = TrainConfig(alpha_w=0.01, alpha_p=1.0, max_iters=4, max_error=1e-300)
        data = Dataset(np.array([[0.5], [-0.5]]), np.array([[0.1, 0.2], [0.3, 0.4]]), "regression")
        _, log = train(net, data, cfg)
        assert log.p_labels == [(1, 0), (1, 1), (1, 2), (1, 3), (2, 0), (2, 1)]
        assert log.p_history.shape == (4, 6)

    def test_classification_p_labels_skip_output(self):
        net = init_network([2, 3, 2], "classification", lam=1.0, initial_p=2.0, seed=12)
        Y = np.zeros((4, 2))
        Y[:, 0] = 1.0
        data = Dataset(np.random.default_rng(12).standard_normal((4, 2)), Y, "classification")
        cfg = TrainConfig(alpha_w=0.01, alpha_p=1.0, max_iters=3, max_error=1e-300)
        _, log = train(net, data, cfg)
        assert log.p_labels == [(1, 0), (1, 1), (1, 2)]
        assert log.p_history.shape == (3, 3)


class TestTrainIncremental:
    def test_single_sample_matches_batch(self):
        # With one training pair the mean gradient equals the pair
        # gradient, so both modes follow the same trajectory.
        net = single_neuron_net()
        data = Dataset(np.array([[3.0]]), np.array([[0.0]]), "regression")
        cfg_b = TrainConfig(0.1, 0.0, 12, 1e-300, update="batch")
        cfg_i = TrainConfig(0.1, 0.0, 12, 1e-300, update="incremental")
        tb, lb = train(net, data, cfg_b)
        ti, li = train(net, data, cfg_i)
        assert_allclose(li.errors, lb.errors, rtol=1e-10, atol=1e-15)
        assert_allclose(ti.weights[0], tb.weights[0], rtol=1e-10, atol=1e-15)

    def test_differs_from_batch_on_multiple_samples(self):
        net = init_network([1, 4, 1], "regression", lam=1.0, initial_p=2.5, seed=13)
        data = toy_regression(n=20, seed=13)
        tb, lb = train(net, data, TrainConfig(0.05, 0.0, 5, 1e-300, update="batch"))
        ti, li = train(net, data, TrainConfig(0.05, 0.0, 5, 1e-300, update="incremental"))
        assert not np.allclose(lb.errors, li.errors)

    def test_decreases_error(self):
        net = init_network([1, 4, 1], "regression", lam=1.0, initial_p=2.5, seed=14)
        data = toy_regression(seed=14)
        _, log = train(net, data, TrainConfig(0.05, 0.0, 40, 1e-300, update="incremental"))
        assert log.errors[-1] < log.errors[0]

    def test_determinism(self):
        net = init_network([1, 4, 1], "regression", lam=1.0, initial_p=2.5, seed=15)
        data = toy_regression(seed=15)
        cfg = TrainConfig(0.05, 5.0, 10, 1e-300, update="incremental")
        t1, l1 = train(net, data, cfg)
        t2, l2 = train(net, data, cfg)
        assert_array_equal(l1.errors, l2.errors)
        for Wa, Wb in zip(t1.weights, t2.weights):
            assert_array_equal(Wa, Wb)

    def test_frozen_p_is_bit_identical(self):
        net = init_network([1, 4, 1], "regression", lam=1.0, initial_p=2.5, seed=16)
        before = [pk.copy() for pk in net.p_values]
        cfg = TrainConfig(0.05, 0.0, 15, 1e-300, update="incremental")
        trained, _ = train(net, toy_regression(seed=16), cfg)
        for pk_before, pk_after in zip(before, trained.p_values):
            assert_array_equal(pk_before, pk_after)

    def test_p_stays_clamped(self):
        net = init_network([1, 4, 1], "regression", lam=1.0, initial_p=2.0, seed=17)
        cfg = TrainConfig(0.01, 1e9, 4, 1e-300, update="incremental")
        trained, _ = train(net, toy_regression(seed=17), cfg)
        for pk in trained.p_values:
            assert np.all(pk >= P_MIN) and np.all(pk <= P_MAX)

    def test_classification_head(self):
        rng = np.random.default_rng(18)
        X = rng.standard_normal((30, 2))
        Y = np.zeros((30, 2))
        Y[np.arange(30), (X[:, 0] > 0).astype(int)] = 1.0
        data = Dataset(X, Y, "classification")
        net = init_network([2, 4, 2], "classification", lam=1.0, initial_p=2.0, seed=18)
        e0 = mse(forward_batch(net, X).outputs[-1], Y)
        _, log = train(net, data, TrainConfig(0.5, 0.0, 60, 1e-300, update="incremental"))
        assert log.errors[-1] < e0


class TestClassificationError:
    @staticmethod
    def sign_classifier() -> PNetwork:
        # Two softmax outputs driven by +/- 5x: argmax 0 for x > 0,
        # argmax 1 for x < 0, tie (resolved to index 0) at x = 0.
        return PNetwork(
            layer_sizes=[1, 2],
            weights=[np.array([[0.0, 5.0], [0.0, -5.0]])],
            p_values=[None],
            lam=1.0,
            head="classification",
        )

    def test_zero_and_full_error(self):
        net = self.sign_classifier()
        X = np.array([[2.0], [-3.0], [1.0], [-0.5]])
        right = np.array([[1, 0], [0, 1], [1, 0], [0, 1]], dtype=float)
        data_right = Dataset(X, right, "classification")
        data_wrong = Dataset(X, right[:, ::-1].copy(), "classification")
        assert classification_error(net, data_right) == 0.0
        assert classification_error(net, data_wrong) == 1.0

    def test_tie_breaks_to_lowest_index(self):
        net = self.sign_classifier()
        data = Dataset(np.array([[0.0]]), np.array([[1.0, 0.0]]), "classification")
        assert classification_error(net, data) == 0.0

    def test_regression_dataset_rejected(self):
        net = self.sign_classifier()
        with pytest.raises(ValueError):
            classification_error(net, toy_regression())


class TestTrainLog:
    def test_errors_nonnegative_and_finite(self):
        net = init_network([1, 3, 1], "regression", lam=1.0, initial_p=2.0, seed=19)
        _, log = train(net, toy_regression(seed=19), TrainConfig(0.05, 1.0, 10, 1e-300))
        assert isinstance(log, TrainLog)
        assert np.all(log.errors >= 0.0) and np.all(np.isfinite(log.errors))
