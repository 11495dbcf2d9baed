from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from airmark import nn
from airmark.classifier import build_assistnet
from airmark.errors import InputTooSmall, MissingCache, ShapeMismatch

import oracles


def small_net(seed=0, shape=(12, 14, 2)):
    layers = [
        nn.LayerSpec(nn.CONV, kernel_h=3, kernel_w=3, filters=4),
        nn.LayerSpec(nn.RELU),
        nn.LayerSpec(nn.POOL),
        nn.LayerSpec(nn.CONV, kernel_h=3, kernel_w=3, filters=3),
        nn.LayerSpec(nn.RELU),
        nn.LayerSpec(nn.FLATTEN),
        nn.LayerSpec(nn.DENSE, units=5),
        nn.LayerSpec(nn.RELU),
        nn.LayerSpec(nn.DENSE, units=1),
        nn.LayerSpec(nn.SIGMOID),
    ]
    net = nn.NetworkSpec(input_shape=shape, layers=layers)
    return nn.init_weights(net, seed)


def _routing_signature(net, cache):
    """Pool argmax maps and relu activity masks from a forward cache."""
    sig = []
    for spec, c in zip(net.layers, cache):
        if spec.kind == nn.POOL:
            sig.append(c[1])
        elif spec.kind == nn.RELU:
            sig.append(c > 0.0)
    return sig


def finite_diff_check(net, x, target, coords_per_tensor=6, delta=1e-4, rng=None):
    """Max relative error between analytic and central-difference gradients.

    Coordinates whose +/- delta evaluations route differently through a
    max-pool argmax or a relu gate are skipped: the loss has a kink inside
    [p - delta, p + delta] there, so a central difference estimates nothing.
    """
    prob, cache = nn.forward(net, x, keep_cache=True)
    _, dpred = nn.bce_loss(prob, target)
    grads = nn.backward(net, cache, dpred)
    flat_g = [a for g in grads for a in g]
    worst = 0.0
    checked = 0
    for p, g in zip(nn.flat_params(net), flat_g):
        pv, gv = p.reshape(-1), g.reshape(-1)
        want = min(coords_per_tensor, pv.size)
        if rng is None:
            candidates = range(pv.size)
        else:
            candidates = rng.permutation(pv.size)
        done = 0
        for k in candidates:
            if done >= want:
                break
            orig = pv[k]
            pv[k] = orig + delta
            prob_p, cache_p = nn.forward(net, x, keep_cache=True)
            lp, _ = nn.bce_loss(prob_p, target)
            sig_p = _routing_signature(net, cache_p)
            pv[k] = orig - delta
            prob_m, cache_m = nn.forward(net, x, keep_cache=True)
            lm, _ = nn.bce_loss(prob_m, target)
            sig_m = _routing_signature(net, cache_m)
            pv[k] = orig
            if not all(np.array_equal(a, b) for a, b in zip(sig_p, sig_m)):
                continue
            fd = (lp - lm) / (2 * delta)
            worst = max(worst, abs(fd - gv[k]) / max(abs(fd), abs(gv[k]), 1e-6))
            done += 1
            checked += 1
    assert checked > 0, "every sampled coordinate straddled a kink"
    return worst


class TestConvForward:
    def test_all_ones(self):
        out = nn.conv2d_forward(np.ones((3, 3, 1)), np.ones((3, 3, 1, 1)), np.zeros(1))
        assert out.shape == (1, 1, 1) and out[0, 0, 0] == 9.0

    def test_delta_kernel_is_center_crop(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(0, 1, (6, 7, 1))
        k = np.zeros((3, 3, 1, 1))
        k[1, 1, 0, 0] = 1.0
        out = nn.conv2d_forward(x, k, np.zeros(1))
        assert np.array_equal(out[:, :, 0], x[1:5, 1:6, 0])

    def test_matches_loop_oracle_exactly(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(5, 5, 2))
        k = rng.normal(size=(3, 3, 2, 3))
        b = rng.normal(size=3)
        assert np.array_equal(nn.conv2d_forward(x, k, b), oracles.conv2d_loops(x, k, b))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            nn.conv2d_forward(np.ones((4, 4, 2)), np.ones((3, 3, 1, 1)), np.zeros(1))
        with pytest.raises(ShapeMismatch):
            nn.conv2d_forward(np.ones((2, 2, 1)), np.ones((3, 3, 1, 1)), np.zeros(1))


class TestPoolForward:
    def test_two_by_two(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(2, 2, 1)
        out, arg = nn.maxpool2d_forward(x)
        assert out[0, 0, 0] == 4.0
        assert arg[0, 0, 0] == 3  # bottom-right in row-major window order

    def test_tie_takes_first_in_window_order(self):
        x = np.full((2, 2, 1), 0.5)
        out, arg = nn.maxpool2d_forward(x)
        assert out[0, 0, 0] == 0.5 and arg[0, 0, 0] == 0

    def test_constant_input(self):
        out, _ = nn.maxpool2d_forward(np.full((6, 8, 3), 0.25))
        assert np.all(out == 0.25) and out.shape == (3, 4, 3)

    def test_matches_window_oracle_exactly(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(6, 6, 4))
        out, _ = nn.maxpool2d_forward(x)
        assert np.array_equal(out, oracles.maxpool2d_loops(x))

    def test_odd_trailing_dropped(self):
        out, _ = nn.maxpool2d_forward(np.zeros((5, 7, 1)))
        assert out.shape == (2, 3, 1)


class TestDenseForward:
    def test_identity_weights(self):
        x = np.arange(4.0)
        assert np.array_equal(nn.dense_forward(x, np.eye(4), np.zeros(4)), x)

    def test_zero_weights_gives_bias(self):
        b = np.array([1.5, -2.0])
        assert np.array_equal(nn.dense_forward(np.ones(3), np.zeros((3, 2)), b), b)

    def test_matches_loop_oracle_exactly(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=8)
        w = rng.normal(size=(8, 4))
        b = rng.normal(size=4)
        assert np.array_equal(nn.dense_forward(x, w, b), oracles.dense_loops(x, w, b))


class TestActivationsAndLoss:
    def test_relu_values(self):
        out = nn.activations(np.array([-1.0, 2.0]), nn.RELU)
        assert np.array_equal(out, [0.0, 2.0])

    def test_sigmoid_midpoint(self):
        assert nn.activations(np.zeros(1), nn.SIGMOID)[0] == 0.5

    def test_sigmoid_bounded_monotone(self):
        xs = np.array([-10.0, -1.0, 0.0, 1.0, 10.0])
        ys = nn.activations(xs, nn.SIGMOID)
        assert np.all(ys > 0) and np.all(ys < 1) and np.all(np.diff(ys) > 0)

    def test_bce_half(self):
        loss, _ = nn.bce_loss(0.5, 1.0)
        assert abs(loss - math.log(2)) < 1e-12

    def test_bce_confident_wrong(self):
        loss, _ = nn.bce_loss(0.9, 0.0)
        assert abs(loss - (-math.log(0.1))) < 1e-12

    def test_bce_clamps_at_one(self):
        loss, _ = nn.bce_loss(1.0, 1.0)
        assert 0 < loss < 2e-7

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.0, 1.0), st.sampled_from([0.0, 1.0]))
    def test_bce_nonnegative(self, pred, target):
        loss, _ = nn.bce_loss(pred, target)
        assert loss >= 0.0


class TestBackward:
    def test_zero_dloss_gives_zero_grads(self):
        net = small_net()
        x = np.random.default_rng(0).uniform(0, 1, net.input_shape)
        _, cache = nn.forward(net, x, keep_cache=True)
        grads = nn.backward(net, cache, 0.0)
        assert all(np.all(a == 0.0) for g in grads for a in g)

    def test_missing_cache(self):
        net = small_net()
        with pytest.raises(MissingCache):
            nn.backward(net, None, 1.0)

    def test_single_dense_layer_outer_product(self):
        layers = [nn.LayerSpec(nn.DENSE, units=1), nn.LayerSpec(nn.SIGMOID)]
        net = nn.NetworkSpec(input_shape=(3,), layers=layers)
        net.params = [[np.array([[0.2], [-0.4], [0.6]]), np.array([0.1])], []]
        x = np.array([1.0, 2.0, -0.5])
        prob, cache = nn.forward(net, x, keep_cache=True)
        grads = nn.backward(net, cache, 1.0)
        s = prob  # d(sigmoid)/dz = s(1-s), d_loss = 1
        dz = s * (1 - s)
        assert np.allclose(grads[0][0], np.outer(x, [dz]), atol=1e-12)
        assert np.allclose(grads[0][1], [dz], atol=1e-12)

    @pytest.mark.parametrize("seed", [0, 1])
    def test_small_net_finite_differences(self, seed):
        net = small_net(seed)
        rng = np.random.default_rng(seed + 100)
        x = rng.uniform(0, 1, net.input_shape)
        worst = finite_diff_check(net, x, float(seed % 2), rng=rng)
        assert worst < 1e-4


class TestAdam:
    def make(self, values, lr=1e-3):
        params = [np.array(values, dtype=float)]
        return params, nn.init_adam(params, lr=lr)

    def test_zero_gradients_leave_params(self):
        params, state = self.make([1.0, -2.0])
        new, _ = nn.adam_step(params, [np.zeros(2)], state)
        assert np.array_equal(new[0], params[0])

    def test_first_step_magnitude_is_about_lr(self):
        params, state = self.make([0.0], lr=1e-3)
        new, _ = nn.adam_step(params, [np.array([0.73])], state)
        assert abs(abs(new[0][0]) - 1e-3) < 1e-8

    def test_two_step_hand_trace(self):
        lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
        params, state = self.make([0.5], lr=lr)
        trace = oracles.adam_trace(0.5, [0.3, -0.2], lr, b1, b2, eps)
        new, state = nn.adam_step(params, [np.array([0.3])], state)
        assert abs(new[0][0] - trace[0]) < 1e-12
        new, state = nn.adam_step(new, [np.array([-0.2])], state)
        assert abs(new[0][0] - trace[1]) < 1e-12

    def test_shape_mismatch(self):
        params, state = self.make([1.0, 2.0])
        with pytest.raises(ShapeMismatch):
            nn.adam_step(params, [np.zeros(3)], state)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_lr_zero_never_moves(self, seed):
        rng = np.random.default_rng(seed)
        params = [rng.normal(size=4)]
        state = nn.init_adam(params, lr=0.0)
        new, _ = nn.adam_step(params, [rng.normal(size=4)], state)
        assert np.array_equal(new[0], params[0])

    def test_t_increments_by_one(self):
        params, state = self.make([1.0])
        for expected in (1, 2, 3):
            params, state = nn.adam_step(params, [np.array([0.1])], state)
            assert state.t == expected


class TestInitAndShapes:
    def test_same_seed_bit_identical(self):
        a, b = small_net(7), small_net(7)
        for pa, pb in zip(nn.flat_params(a), nn.flat_params(b)):
            assert np.array_equal(pa, pb)

    def test_biases_zero(self):
        net = small_net(1)
        for group in net.params:
            if group:
                assert np.all(group[1] == 0.0)

    def test_weight_ranges_match_fan_in_limits(self):
        net = build_assistnet(54, 96)
        nn.init_weights(net, 13)
        dense_idx = [i for i, l in enumerate(net.layers) if l.kind == nn.DENSE]
        for i, (spec, group) in enumerate(zip(net.layers, net.params)):
            if not group:
                continue
            w = group[0]
            if spec.kind == nn.CONV:
                limit = math.sqrt(6.0 / (w.shape[0] * w.shape[1] * w.shape[2]))
            elif i == dense_idx[-1]:
                limit = math.sqrt(6.0 / (w.shape[0] + w.shape[1]))
            else:
                limit = math.sqrt(6.0 / w.shape[0])
            assert np.all(np.abs(w) <= limit)

    def test_forward_deterministic(self):
        net = small_net(3)
        x = np.random.default_rng(9).uniform(0, 1, net.input_shape)
        assert nn.predict(net, x) == nn.predict(net, x)

    @pytest.mark.parametrize("h,w", [(30, 30), (54, 96), (150, 150), (225, 400)])
    def test_assistnet_shape_algebra_yields_scalar(self, h, w):
        net = build_assistnet(h, w)
        shapes = nn.infer_shapes(net.input_shape, net.layers)
        assert shapes[-1] == (1,)

    def test_assistnet_too_small(self):
        with pytest.raises(InputTooSmall):
            build_assistnet(8, 8)
