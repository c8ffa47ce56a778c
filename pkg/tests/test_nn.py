"""Neural core tests: forward oracles, gradient checks, Adam, schedule."""

import numpy as np
import pytest

from speechground import nn
from util import central_fd, check_grads


def small_mlp(rng, d_in=5, h1=8, h2=7, d_out=6):
    return nn.init_mlp(nn.MlpSpec(d_in, h1, h2, d_out), rng)


def small_lstm(rng, d_in=3, hidden=6, tail=4, d_out=5):
    return nn.init_lstm(nn.LstmSpec(d_in, hidden, tail, d_out), rng)


class TestMlpForward:
    def test_zero_weights_give_zero_output(self):
        params = small_mlp(np.random.default_rng(0))
        for k in params.weights:
            params.weights[k][:] = 0.0
        out, _ = nn.mlp_forward(params, np.ones(5))
        np.testing.assert_array_equal(out, np.zeros(6))

    def test_hand_computed_two_unit_net(self):
        # 2 -> 2 -> 2 -> 2 with known weights, x = [1, -1]:
        # z1 = [1.5, -1.5], a1 = [1.5, 0]
        # z2 = [1.5, 1.75], a2 = [1.5, 1.75]
        # out = [1.5*2 + 1, 1.75*(-2) + 1] = [4, -2.5]
        params = nn.EncoderParams(
            arch="mlp",
            dims={"input_dim": 2, "hidden1": 2, "hidden2": 2, "output_dim": 2},
            weights={
                "w1": np.eye(2), "b1": np.array([0.5, -0.5]),
                "w2": np.array([[1.0, 1.0], [1.0, -1.0]]), "b2": np.array([0.0, 0.25]),
                "w3": np.array([[2.0, 0.0], [0.0, -2.0]]), "b3": np.array([1.0, 1.0]),
            },
        )
        out, _ = nn.mlp_forward(params, np.array([1.0, -1.0]))
        np.testing.assert_allclose(out, [4.0, -2.5], rtol=0, atol=1e-15)

    def test_matches_triple_loop_matmul_oracle(self):
        rng = np.random.default_rng(7)
        params = small_mlp(rng)
        x = rng.normal(size=5)

        def naive_linear(vec, w, b):
            out = np.zeros(w.shape[1])
            for j in range(w.shape[1]):
                acc = 0.0
                for i in range(w.shape[0]):
                    acc += vec[i] * w[i, j]
                out[j] = acc + b[j]
            return out

        w = params.weights
        z1 = naive_linear(x, w["w1"], w["b1"])
        a1 = np.array([max(v, 0.0) for v in z1])
        z2 = naive_linear(a1, w["w2"], w["b2"])
        a2 = np.array([max(v, 0.0) for v in z2])
        expected = naive_linear(a2, w["w3"], w["b3"])

        out, _ = nn.mlp_forward(params, x)
        np.testing.assert_allclose(out, expected, rtol=0, atol=1e-12)

    def test_batch_matches_per_row(self):
        rng = np.random.default_rng(3)
        params = small_mlp(rng)
        X = rng.normal(size=(4, 5))
        batch_out, _ = nn.mlp_forward(params, X)
        for i in range(4):
            row_out, _ = nn.mlp_forward(params, X[i])
            # gemm vs gemv rounding differs; agreement is to fp precision
            np.testing.assert_allclose(batch_out[i], row_out, rtol=1e-12, atol=1e-14)

    def test_dimension_mismatch_raises(self):
        params = small_mlp(np.random.default_rng(0))
        with pytest.raises(nn.DimensionMismatchError):
            nn.mlp_forward(params, np.ones(4))

    def test_non_finite_input_raises(self):
        params = small_mlp(np.random.default_rng(0))
        with pytest.raises(nn.NonFiniteError):
            nn.mlp_forward(params, np.array([1.0, np.nan, 0.0, 0.0, 0.0]))

    def test_forward_determinism(self):
        rng = np.random.default_rng(5)
        params = small_mlp(rng)
        x = rng.normal(size=5)
        a, _ = nn.mlp_forward(params, x)
        b, _ = nn.mlp_forward(params, x)
        assert np.array_equal(a, b)


class TestLstmForward:
    def test_zero_weights_projection_equals_bias(self):
        params = small_lstm(np.random.default_rng(0))
        for k in params.weights:
            params.weights[k][:] = 0.0
        params.weights["bp"][:] = 1.25
        out, cache = nn.lstm_forward(params, np.random.default_rng(1).normal(size=(7, 3)))
        np.testing.assert_array_equal(out, np.full(5, 1.25))
        assert np.all(cache["concat"] == 0.0)

    def test_short_sequence_left_padding(self):
        # tail_states=4, sequence length 2 -> 2 zero blocks then 2 real states.
        rng = np.random.default_rng(2)
        params = small_lstm(rng)
        seq = rng.normal(size=(2, 3))
        _, cache = nn.lstm_forward(params, seq)
        concat = cache["concat"]
        assert concat.shape == (4 * 6,)
        np.testing.assert_array_equal(concat[: 2 * 6], np.zeros(12))
        assert np.any(concat[2 * 6 :] != 0.0)

    def test_one_step_matches_hand_gate_equations(self):
        rng = np.random.default_rng(9)
        params = nn.init_lstm(nn.LstmSpec(2, 3, 4, 5), rng)
        x = rng.normal(size=(1, 2))
        w = params.weights
        a = x[0] @ w["wx"] + w["b"]

        def sigmoid(v):
            return 1.0 / (1.0 + np.exp(-v))

        i = sigmoid(a[0:3])
        f = sigmoid(a[3:6])
        g = np.tanh(a[6:9])
        o = sigmoid(a[9:12])
        c = i * g  # c_prev = 0, so the forget branch drops out
        h = o * np.tanh(c)

        _, cache = nn.lstm_forward(params, x)
        np.testing.assert_allclose(cache["concat"][-3:], h, rtol=0, atol=1e-12)

    def test_empty_sequence_raises(self):
        params = small_lstm(np.random.default_rng(0))
        with pytest.raises(ValueError):
            nn.lstm_forward(params, np.zeros((0, 3)))


class TestBackward:
    def test_linear_net_sum_loss_gradient_is_outer_product(self):
        # Identity weights, zero biases, positive input: the net is linear
        # and d(sum out)/dW1 reduces to outer(x, ones).
        params = nn.EncoderParams(
            arch="mlp",
            dims={"input_dim": 2, "hidden1": 2, "hidden2": 2, "output_dim": 2},
            weights={
                "w1": np.eye(2), "b1": np.zeros(2),
                "w2": np.eye(2), "b2": np.zeros(2),
                "w3": np.eye(2), "b3": np.zeros(2),
            },
        )
        x = np.array([0.7, 0.2])
        out, cache = nn.mlp_forward(params, x)
        grads, _ = nn.mlp_backward(params, cache, np.ones(2))
        np.testing.assert_allclose(grads["w1"], np.outer(x, np.ones(2)), atol=1e-15)
        np.testing.assert_allclose(grads["b3"], np.ones(2), atol=1e-15)

    def test_mlp_gradients_match_finite_differences(self):
        rng = np.random.default_rng(17)
        params = small_mlp(rng)
        x = rng.normal(size=5)
        direction = rng.normal(size=6)

        _, cache = nn.mlp_forward(params, x)
        analytic, _ = nn.mlp_backward(params, cache, direction)

        def loss(weights):
            out, c = nn.mlp_forward(params, x)
            sig = np.concatenate([(c["z1"] > 0).ravel(), (c["z2"] > 0).ravel()])
            return float(out @ direction), sig

        fd, excluded = central_fd(loss, params.weights)
        n_ok, n_checked, _, worst = check_grads(analytic, fd, excluded)
        assert n_ok == n_checked, f"worst relative error {worst}"

    def test_lstm_gradients_match_finite_differences(self):
        rng = np.random.default_rng(23)
        params = small_lstm(rng)
        seq = rng.normal(size=(6, 3))
        direction = rng.normal(size=5)

        _, cache = nn.lstm_forward(params, seq)
        analytic, _ = nn.lstm_backward(params, cache, direction)

        def loss(weights):
            out, _ = nn.lstm_forward(params, seq)
            return float(out @ direction), np.zeros(1)  # smooth: no kinks

        fd, excluded = central_fd(loss, params.weights)
        n_ok, n_checked, _, worst = check_grads(analytic, fd, excluded)
        assert n_ok == n_checked, f"worst relative error {worst}"

    def test_mlp_input_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(31)
        params = small_mlp(rng)
        x = rng.normal(size=5)
        direction = rng.normal(size=6)
        _, cache = nn.mlp_forward(params, x)
        _, dx = nn.mlp_backward(params, cache, direction)
        h = 1e-6
        for i in range(5):
            xp = x.copy(); xp[i] += h
            xm = x.copy(); xm[i] -= h
            up, _ = nn.mlp_forward(params, xp)
            dn, _ = nn.mlp_forward(params, xm)
            fd = (up @ direction - dn @ direction) / (2 * h)
            assert abs(fd - dx[i]) < 1e-6 * max(1.0, abs(fd))


class TestAdam:
    def test_single_step_matches_hand_formulas(self):
        # m=0.1, v=0.001, bias-corrected to 1 and 1: update = -lr/(1+eps).
        weights = {"w": np.array([0.0])}
        state = nn.Adam(weights)
        state.step(weights, {"w": np.array([1.0])}, lr=1e-3)
        assert abs(weights["w"][0] + 0.001) < 1e-9

    def test_zero_gradient_is_fixed_point(self):
        weights = {"w": np.array([1.5, -2.0])}
        state = nn.Adam(weights)
        state.step(weights, {"w": np.zeros(2)}, lr=1e-3)
        np.testing.assert_array_equal(weights["w"], [1.5, -2.0])

    def test_moments_decay_geometrically(self):
        weights = {"w": np.array([0.0])}
        state = nn.Adam(weights)
        state.step(weights, {"w": np.array([1.0])}, lr=0.0)
        m0, v0 = state.m["w"][0], state.v["w"][0]
        for k in range(1, 4):
            state.step(weights, {"w": np.zeros(1)}, lr=0.0)
            np.testing.assert_allclose(state.m["w"][0], m0 * 0.9**k, rtol=1e-12)
            np.testing.assert_allclose(state.v["w"][0], v0 * 0.999**k, rtol=1e-12)

    def test_non_finite_gradient_raises(self):
        weights = {"w": np.zeros(2)}
        state = nn.Adam(weights)
        with pytest.raises(nn.NonFiniteError):
            state.step(weights, {"w": np.array([1.0, np.inf])}, lr=1e-3)


class TestLrSchedule:
    def test_step_decay_boundaries(self):
        assert nn.lr_at_epoch(1e-3, 0) == 1e-3
        assert nn.lr_at_epoch(1e-3, 99) == 1e-3
        assert nn.lr_at_epoch(1e-3, 100) == pytest.approx(1e-4)
        assert nn.lr_at_epoch(1e-3, 199) == pytest.approx(1e-4)
        assert nn.lr_at_epoch(1e-3, 200) == pytest.approx(1e-5)
        assert nn.lr_at_epoch(1e-3, 299) == pytest.approx(1e-5)

    def test_scaled_schedule(self):
        assert nn.lr_at_epoch(1e-3, 19, decay_epochs=20) == 1e-3
        assert nn.lr_at_epoch(1e-3, 20, decay_epochs=20) == pytest.approx(1e-4)


class TestCheckpointRoundTrip:
    def test_encoder_save_load(self, tmp_path):
        rng = np.random.default_rng(41)
        params = small_mlp(rng)
        path = tmp_path / "enc.sgenc"
        nn.save_encoder(path, params)
        loaded = nn.load_encoder(path)
        assert loaded.arch == "mlp"
        assert loaded.dims == params.dims
        for k in params.weights:
            np.testing.assert_array_equal(
                loaded.weights[k], params.weights[k].astype(np.float32).astype(np.float64)
            )

    def test_lstm_checkpoint_round_trip(self, tmp_path):
        params = small_lstm(np.random.default_rng(43))
        path = tmp_path / "enc.sgenc"
        nn.save_encoder(path, params)
        loaded = nn.load_encoder(path)
        assert loaded.arch == "lstm"
        assert set(loaded.weights) == set(params.weights)
