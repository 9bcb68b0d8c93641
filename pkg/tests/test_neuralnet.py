"""Dense network forward/backward and the Adam optimizer."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gntsflow import ParameterError
from gntsflow.neuralnet import AdamState, DenseNet, adam_step


def tiny_net(seed=0, slope=0.2, zero_init_output=False, dims=(3, 5, 2)):
    return DenseNet(
        list(dims), np.random.default_rng(seed), slope=slope,
        zero_init_output=zero_init_output,
    )


class TestForward:
    def test_matches_manual_chain(self):
        net = tiny_net()
        x = np.array([[0.3, -1.2, 0.7]])
        h = x @ net.weights[0] + net.biases[0]
        h = np.where(h > 0, h, net.slope * h)
        want = h @ net.weights[1] + net.biases[1]
        got, _ = net.forward(x)
        np.testing.assert_allclose(got, want, rtol=1e-14)

    def test_zero_init_output_returns_zeros(self):
        net = tiny_net(zero_init_output=True)
        x = np.random.default_rng(3).standard_normal((17, 3))
        out, _ = net.forward(x)
        np.testing.assert_array_equal(out, np.zeros((17, 2)))

    def test_bad_input_shape_rejected(self):
        net = tiny_net()
        with pytest.raises(ParameterError):
            net.forward(np.zeros((4, 7)))

    def test_bad_layer_dims_rejected(self):
        with pytest.raises(ParameterError):
            DenseNet([3], np.random.default_rng(0))

    @given(a=st.floats(0.0, 1.0), seed=st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_affine_when_slope_is_one(self, a, seed):
        # slope=1 turns the activation into the identity, so the whole net is
        # affine: f(a x + (1-a) y) = a f(x) + (1-a) f(y)
        net = tiny_net(slope=1.0)
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((1, 3))
        y = rng.standard_normal((1, 3))
        lhs, _ = net.forward(a * x + (1.0 - a) * y)
        fx, _ = net.forward(x)
        fy, _ = net.forward(y)
        np.testing.assert_allclose(lhs, a * fx + (1.0 - a) * fy, rtol=1e-10, atol=1e-12)

    def test_float32_stays_float32(self):
        net = DenseNet([3, 4, 2], np.random.default_rng(0), dtype=np.float32)
        out, _ = net.forward(
            np.random.default_rng(1).standard_normal((5, 3)).astype(np.float32)
        )
        assert out.dtype == np.float32


class TestBackward:
    def test_gradients_match_finite_differences(self):
        net = tiny_net(seed=7, dims=(4, 6, 6, 3))
        rng = np.random.default_rng(11)
        x = rng.standard_normal((8, 4))
        target = rng.standard_normal((8, 3))

        def loss_value():
            out, _ = net.forward(x)
            return 0.5 * np.sum((out - target) ** 2)

        out, cache = net.forward(x)
        grads_w, grads_b, _ = net.backward(cache, out - target)

        h = 1e-5
        for arr, g in zip(net.weights + net.biases, grads_w + grads_b):
            it = np.nditer(arr, flags=["multi_index"])
            checked = 0
            while not it.finished and checked < 6:
                idx = it.multi_index
                old = arr[idx]
                arr[idx] = old + h
                up = loss_value()
                arr[idx] = old - h
                down = loss_value()
                arr[idx] = old
                fd = (up - down) / (2.0 * h)
                if abs(fd) > 1e-7:
                    assert g[idx] == pytest.approx(fd, rel=2e-4), (
                        f"param {arr.shape} idx {idx}: analytic {g[idx]:.8g} fd {fd:.8g}"
                    )
                    checked += 1
                it.iternext()

    def test_input_gradient_matches_finite_differences(self):
        net = tiny_net(seed=13)
        x = np.random.default_rng(17).standard_normal((3, 3))
        out, cache = net.forward(x)
        _, _, gx = net.backward(cache, np.ones_like(out))
        h = 1e-6
        for i in range(3):
            for j in range(3):
                xp = x.copy()
                xp[i, j] += h
                xm = x.copy()
                xm[i, j] -= h
                up, _ = net.forward(xp)
                down, _ = net.forward(xm)
                fd = (up.sum() - down.sum()) / (2.0 * h)
                assert gx[i, j] == pytest.approx(fd, rel=1e-4, abs=1e-9)

    def test_parameters_lists_weights_and_biases(self):
        net = tiny_net()
        params = net.parameters()
        assert len(params) == 2 * net.n_layers
        assert params[0] is net.weights[0]
        assert params[1] is net.biases[0]


class TestAdam:
    def test_first_step_magnitude_is_lr(self):
        # with m=v=0, the bias-corrected first update is lr * sign(grad)
        params = [np.array([1.0, -2.0, 3.0])]
        grads = [np.array([0.5, -0.1, 2.0])]
        state = AdamState.for_params(params, lr=0.01)
        adam_step(params, grads, state)
        np.testing.assert_allclose(
            params[0], [1.0 - 0.01, -2.0 + 0.01, 3.0 - 0.01], rtol=1e-6
        )

    def test_converges_on_quadratic_bowl(self):
        rng = np.random.default_rng(5)
        params = [rng.standard_normal((4,))]
        state = AdamState.for_params(params, lr=0.05)
        for _ in range(600):
            adam_step(params, [2.0 * params[0]], state)
        assert np.all(np.abs(params[0]) < 1e-3)

    def test_nonfinite_gradients_skip_update(self):
        params = [np.array([1.0, 2.0])]
        state = AdamState.for_params(params, lr=0.1)
        adam_step(params, [np.array([np.nan, 0.0])], state)
        np.testing.assert_array_equal(params[0], [1.0, 2.0])
        assert state.skipped == 1
        assert state.step == 1  # step still counts, update does not

    def test_mismatched_lengths_rejected(self):
        params = [np.zeros(2)]
        state = AdamState.for_params(params)
        with pytest.raises(ParameterError):
            adam_step(params, [np.zeros(2), np.zeros(3)], state)

    def test_float32_params_stay_float32(self):
        params = [np.ones(3, dtype=np.float32)]
        state = AdamState.for_params(params, lr=0.01)
        adam_step(params, [np.ones(3, dtype=np.float32)], state)
        assert params[0].dtype == np.float32
        assert state.m[0].dtype == np.float32
