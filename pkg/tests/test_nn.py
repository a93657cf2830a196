import math

import numpy as np
import pytest

from magicnet import nn


def zero_params(input_dim, hidden):
    return {k: np.zeros(s) for k, s in nn.param_shapes(input_dim, hidden).items()}


def random_params(input_dim, hidden, seed):
    return nn.init_params(input_dim, hidden, np.random.default_rng(seed))


class TestCellForward:
    def test_zero_params_zero_state(self):
        p = zero_params(3, 4)
        h, _ = nn.gru_cell_forward(np.ones(3), np.zeros(4), p)
        np.testing.assert_array_equal(h, np.zeros(4))

    def test_zero_params_halves_previous_state(self):
        # z = sigmoid(0) = 0.5 and the candidate is tanh(0) = 0,
        # so h' = 0.5 * h_prev exactly
        p = zero_params(2, 5)
        v = np.random.default_rng(0).standard_normal(5)
        h, _ = nn.gru_cell_forward(np.zeros(2), v, p)
        np.testing.assert_allclose(h, 0.5 * v, rtol=0, atol=0)

    def test_scalar_case_matches_hand_evaluation(self):
        # 1-dim everything: evaluate the three gate formulas with math.*
        rng = np.random.default_rng(42)
        p = random_params(1, 1, 42)
        x, hp = 0.7, -0.3
        sig = lambda a: 1.0 / (1.0 + math.exp(-a))
        z = sig(p["Wz"][0, 0] * x + p["Uz"][0, 0] * hp + p["bz"][0])
        r = sig(p["Wr"][0, 0] * x + p["Ur"][0, 0] * hp + p["br"][0])
        c = math.tanh(p["Wh"][0, 0] * x + p["Uh"][0, 0] * (r * hp) + p["bh"][0])
        expected = (1 - z) * hp + z * c
        h, _ = nn.gru_cell_forward(np.array([x]), np.array([hp]), p)
        assert h[0] == pytest.approx(expected, rel=1e-12)

    def test_dimension_mismatch_raises(self):
        p = zero_params(3, 4)
        with pytest.raises(ValueError):
            nn.gru_cell_forward(np.ones(2), np.zeros(4), p)

    def test_gate_ranges(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            p = nn.init_params(3, 6, rng)
            x = rng.uniform(-10, 10, 3)
            hp = rng.uniform(-1, 1, 6)
            _, cache = nn.gru_cell_forward(x, hp, p)
            assert np.all(cache.z > 0) and np.all(cache.z < 1)
            assert np.all(cache.r > 0) and np.all(cache.r < 1)
            assert np.all(cache.c > -1) and np.all(cache.c < 1)


class TestForwardSequence:
    def test_zero_params_gives_logit_zero(self):
        p = zero_params(2, 3)
        seq = np.random.default_rng(0).standard_normal((4, 2))
        logit, _ = nn.forward_sequence(seq, p)
        assert logit == 0.0

    def test_single_step_equals_cell_plus_head(self):
        p = random_params(2, 3, 1)
        x = np.random.default_rng(2).standard_normal(2)
        h, _ = nn.gru_cell_forward(x, np.zeros(3), p)
        expected = float(h @ p["w"] + p["b"])
        logit, _ = nn.forward_sequence(x[None, :], p)
        assert logit == expected

    def test_three_steps_equal_chained_cells(self):
        p = random_params(2, 4, 3)
        seq = np.random.default_rng(4).standard_normal((3, 2))
        h = np.zeros(4)
        for t in range(3):
            h, _ = nn.gru_cell_forward(seq[t], h, p)
        expected = float(h @ p["w"] + p["b"])
        logit, _ = nn.forward_sequence(seq, p)
        assert logit == pytest.approx(expected, rel=0, abs=0)

    def test_empty_sequence_raises(self):
        p = zero_params(2, 3)
        with pytest.raises(ValueError):
            nn.forward_sequence(np.zeros((0, 2)), p)

    def test_batched_forward_matches_loop(self):
        p = random_params(3, 5, 9)
        rng = np.random.default_rng(10)
        batch = rng.standard_normal((6, 4, 3))
        logits, _ = nn.forward_sequence(batch, p)
        singles = [nn.forward_sequence(batch[i], p)[0] for i in range(6)]
        # batched matmuls may round differently from n=1 matmuls in the
        # last ulp, so this is a near-equality check, not bit equality
        np.testing.assert_allclose(logits, np.array(singles), rtol=1e-12, atol=1e-15)


class TestBackward:
    def test_head_bias_gradient_at_zero_logit(self):
        # logit = 0, y = 1: dloss/dlogit = sigmoid(0) - 1 = -0.5
        p = zero_params(2, 3)
        _, cache = nn.forward_sequence(np.ones((2, 2)), p)
        grads = nn.backward_sequence(cache, 1.0)
        assert grads["b"] == pytest.approx(-0.5)

    @pytest.mark.parametrize("hidden", [1, 3, 7])
    @pytest.mark.parametrize("window", [1, 5, 10])
    def test_gradients_match_finite_differences(self, hidden, window):
        rng = np.random.default_rng(hidden * 100 + window)
        p = nn.init_params(2, hidden, rng)
        seq = rng.standard_normal((window, 2))
        y = float(rng.integers(0, 2))
        err = nn.finite_difference_check(
            lambda q: nn.loss_and_grads(seq, y, q), p, eps=1e-5)
        assert err < 1e-4

    def test_batched_gradient_is_mean_of_singles(self):
        p = random_params(2, 4, 5)
        rng = np.random.default_rng(6)
        batch = rng.standard_normal((5, 3, 2))
        ys = rng.integers(0, 2, 5).astype(float)
        _, cache = nn.forward_sequence(batch, p)
        g_batch = nn.backward_sequence(cache, ys)
        accum = nn.zeros_like_params(p)
        for i in range(5):
            _, c = nn.forward_sequence(batch[i], p)
            g = nn.backward_sequence(c, ys[i])
            for k in accum:
                accum[k] += g[k] / 5.0
        for k in accum:
            np.testing.assert_allclose(g_batch[k], accum[k], rtol=1e-12, atol=1e-14)


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        p = random_params(2, 3, 0)
        st = nn.adam_init(p)
        q, st2 = nn.adam_step(p, nn.zeros_like_params(p), st)
        assert st2.step == 1
        for k in p:
            np.testing.assert_array_equal(p[k], q[k])

    def test_first_step_magnitude(self):
        # scalar parameter, g=1: m_hat = v_hat = 1, update = -lr / (1 + eps)
        p = {"x": np.array(0.0)}
        st = nn.adam_init(p, lr=0.01)
        q, _ = nn.adam_step(p, {"x": np.array(1.0)}, st)
        assert q["x"] == pytest.approx(-0.01, rel=1e-6)

    def test_determinism(self):
        p = random_params(2, 3, 1)
        g = {k: np.full_like(v, 0.1) for k, v in p.items()}
        st = nn.adam_init(p)
        a1, s1 = nn.adam_step(p, g, st)
        a2, s2 = nn.adam_step(p, g, st)
        for k in p:
            np.testing.assert_array_equal(a1[k], a2[k])
        assert s1.step == s2.step

    def test_loss_decreases_on_tiny_batch(self):
        rng = np.random.default_rng(12)
        p = nn.init_params(2, 5, rng)
        batch = rng.standard_normal((8, 4, 2))
        ys = rng.integers(0, 2, 8).astype(float)
        st = nn.adam_init(p, lr=0.01)
        losses = []
        for _ in range(100):
            logit, cache = nn.forward_sequence(batch, p)
            losses.append(nn.bce_loss(logit, ys))
            grads = nn.backward_sequence(cache, ys)
            p, st = nn.adam_step(p, grads, st)
        drops = sum(1 for a, b in zip(losses, losses[1:]) if b < a)
        assert drops >= 0.95 * (len(losses) - 1)


class TestFiniteDifferenceCheck:
    def test_quadratic_is_exact(self):
        params = {"x": np.array([1.0, -2.0, 3.0])}

        def quad(p):
            return float(np.sum(p["x"] ** 2)), {"x": 2.0 * p["x"]}

        assert nn.finite_difference_check(quad, params) < 1e-8

    def test_constant_loss_needs_zero_gradient(self):
        params = {"x": np.array([0.3, 0.4])}

        def const(p):
            return 1.0, {"x": np.zeros(2)}

        assert nn.finite_difference_check(const, params) < 1e-12

    def test_wrong_gradient_is_flagged(self):
        params = {"x": np.array([1.0])}

        def bad(p):
            return float(p["x"][0] ** 2), {"x": np.array([0.5])}

        assert nn.finite_difference_check(bad, params) > 0.1


def test_init_determinism():
    a = nn.init_params(3, 4, np.random.default_rng(99))
    b = nn.init_params(3, 4, np.random.default_rng(99))
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])
