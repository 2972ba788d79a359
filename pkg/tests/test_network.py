import numpy as np
import pytest

import gradlens as gl
from gradlens import ops
from gradlens.errors import NonFiniteError, ShapeError
from tests.conftest import linear_softmax_net, tiny_conv_net


class TestForward:
    def test_bare_softmax_head_is_symmetric(self):
        net = gl.NetworkSpec([gl.Softmax()], (2,), 2)
        out = np.asarray(gl.forward(net, np.zeros(2)))
        assert np.allclose(out, [0.5, 0.5])

    def test_identity_dense_softmax_closed_form(self):
        net = linear_softmax_net(np.eye(2))
        out = np.asarray(gl.forward(net, np.array([1.0, 2.0])))
        assert out == pytest.approx([0.26894142137, 0.73105857863], abs=1e-9)

    def test_equals_manual_layer_composition(self):
        net = gl.build_mini_resnet((8, 8, 3), classes=4, blocks=1, channels=5, seed=1)
        x = np.random.default_rng(0).uniform(0, 1, (8, 8, 3))
        got = np.asarray(gl.forward(net, x))

        cur = x[None]
        outputs = [cur]
        for layer in net.layers:
            if layer.kind == "conv":
                cur, _ = ops.conv2d(cur, layer.weight, layer.bias, layer.stride, layer.pad)
            elif layer.kind == "relu":
                cur = ops.relu(cur)
            elif layer.kind == "add":
                cur = ops.residual_add(cur, outputs[layer.skip_from])
            elif layer.kind == "gap":
                cur = ops.global_avg_pool(cur)
            elif layer.kind == "dense":
                cur = ops.dense(cur, layer.weight, layer.bias)
            elif layer.kind == "softmax":
                cur = ops.softmax(cur)
            outputs.append(cur)
        assert np.array_equal(got, cur[0])

    def test_output_is_probability_vector(self):
        net = tiny_conv_net()
        rng = np.random.default_rng(9)
        for _ in range(5):
            out = np.asarray(gl.forward(net, rng.uniform(-2, 2, (6, 6, 2))))
            assert out.min() >= 0.0 and out.max() <= 1.0
            assert abs(out.sum() - 1.0) <= 1e-9

    def test_shape_mismatch_reports_both_shapes(self):
        net = tiny_conv_net()
        with pytest.raises(ShapeError) as exc:
            gl.forward(net, np.zeros((5, 5, 2)))
        assert "(5, 5, 2)" in str(exc.value) and "(6, 6, 2)" in str(exc.value)

    def test_non_finite_input_rejected(self):
        net = tiny_conv_net()
        bad = np.zeros((6, 6, 2))
        bad[0, 0, 0] = np.nan
        with pytest.raises(NonFiniteError):
            gl.forward(net, bad)


class TestBackwardInputGrad:
    def test_linear_model_gradient_is_weight_row_any_mode(self):
        w = np.array([[0.7, -0.3], [0.2, 0.9], [-0.5, 0.4]])
        net = linear_softmax_net(w)
        x = np.array([0.3, 0.8, 0.1])
        for mode in ("standard", "deconv", "guided"):
            g = np.asarray(gl.backward_input_grad(net, x, 1, mode, from_logits=True))
            assert np.allclose(g, w[:, 1], atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_standard_mode_matches_finite_differences(self, seed):
        net = tiny_conv_net(seed=seed)
        x = np.random.default_rng(seed + 100).uniform(-1, 1, (6, 6, 2))
        assert gl.gradient_check(net, x, seed % 3, 1e-6) <= 1e-5

    def test_guided_zero_at_negative_preactivation(self):
        # one input unit feeding a ReLU with pre-activation -0.3
        layers = [
            gl.Dense(np.array([[-0.3]]), np.zeros(1)),
            gl.ReLU(),
            gl.Dense(np.array([[1.0, -1.0]]), np.zeros(2)),
            gl.Softmax(),
        ]
        net = gl.NetworkSpec(layers, (1,), 2)
        g = np.asarray(gl.backward_input_grad(net, np.array([1.0]), 0, "guided"))
        assert g.item() == 0.0

    def test_label_out_of_range(self):
        net = tiny_conv_net()
        with pytest.raises(ValueError):
            gl.backward_input_grad(net, np.zeros((6, 6, 2)), 3)

    def test_deterministic_bits(self):
        net = tiny_conv_net(seed=2)
        x = np.random.default_rng(1).uniform(0, 1, (6, 6, 2))
        a = np.asarray(gl.backward_input_grad(net, x, 0, "guided"))
        b = np.asarray(gl.backward_input_grad(net, x, 0, "guided"))
        assert np.array_equal(a, b)


class TestFeatureGrad:
    def test_node_zero_equals_input_grad(self):
        net = tiny_conv_net(seed=4)
        x = np.random.default_rng(3).uniform(0, 1, (6, 6, 2))
        a = np.asarray(gl.backward_feature_grad(net, x, 0, 1))
        b = np.asarray(gl.backward_input_grad(net, x, 1, "standard"))
        assert np.array_equal(a, b)

    def test_gap_linear_head_constant_per_channel(self):
        from tests.conftest import gap_linear_net

        net = gap_linear_net(seed=6)
        x = np.random.default_rng(5).uniform(0, 1, (6, 6, 2))
        label = 2
        grad = np.asarray(gl.backward_feature_grad(net, x, 1, label, from_logits=True))
        head = net.layers[2].weight
        for ch in range(grad.shape[2]):
            assert np.allclose(grad[:, :, ch], head[ch, label] / 36.0, atol=1e-12)
        # post-softmax gradients are also spatially constant per channel
        grad2 = np.asarray(gl.backward_feature_grad(net, x, 1, label))
        for ch in range(grad2.shape[2]):
            assert np.ptp(grad2[:, :, ch]) == 0.0

    def test_feature_grad_matches_finite_differences(self):
        from tests.conftest import gap_linear_net

        net = gap_linear_net(seed=8)
        x = np.random.default_rng(6).uniform(0, 1, (6, 6, 2))
        grad = np.asarray(gl.backward_feature_grad(net, x, 1, 0))
        rec = gl.trace(net, x)
        acts = rec.nodes[1].copy()

        def prob_with(acts_mod):
            cur = ops.global_avg_pool(acts_mod)
            cur = ops.dense(cur, net.layers[2].weight, net.layers[2].bias)
            return ops.softmax(cur)[0, 0]

        eps = 1e-6
        rng = np.random.default_rng(0)
        flat_idx = rng.choice(acts.size, size=10, replace=False)
        for i in flat_idx:
            bumped = acts.copy().reshape(-1)
            bumped[i] += eps
            hi = prob_with(bumped.reshape(acts.shape))
            bumped[i] -= 2 * eps
            lo = prob_with(bumped.reshape(acts.shape))
            assert grad.reshape(-1)[i] == pytest.approx((hi - lo) / (2 * eps), abs=1e-7)

    def test_zero_head_weights_zero_gradient(self):
        from tests.conftest import gap_linear_net

        net = gap_linear_net(seed=9)
        net.layers[2].weight[:] = 0.0
        x = np.random.default_rng(8).uniform(0, 1, (6, 6, 2))
        grad = np.asarray(gl.backward_feature_grad(net, x, 1, 0))
        assert np.all(grad == 0.0)

    def test_non_conv_node_rejected(self):
        net = tiny_conv_net()
        with pytest.raises(ValueError):
            gl.backward_feature_grad(net, np.zeros((6, 6, 2)), 2, 0)  # a relu node


class TestGradientCheck:
    def test_linear_model_near_exact(self):
        net = linear_softmax_net(np.array([[0.5, -0.2], [0.1, 0.4]]))
        assert gl.gradient_check(net, np.array([0.3, 0.7]), 0, 1e-4) <= 1e-9

    def test_eps_zero_rejected(self):
        net = tiny_conv_net()
        with pytest.raises(ValueError):
            gl.gradient_check(net, np.zeros((6, 6, 2)), 0, 0.0)

    def test_net_with_maxpool_passes(self):
        rng = np.random.default_rng(17)
        layers = [
            gl.Conv2D(rng.standard_normal((3, 3, 1, 3)) * 0.6, rng.standard_normal(3) * 0.1, 1, 1),
            gl.ReLU(),
            gl.MaxPool2D(2),
            gl.GlobalAvgPool(),
            gl.Dense(rng.standard_normal((3, 2)), np.zeros(2)),
            gl.Softmax(),
        ]
        net = gl.NetworkSpec(layers, (6, 6, 1), 2)
        x = rng.uniform(0, 1, (6, 6, 1))
        assert gl.gradient_check(net, x, 0, 1e-6) <= 1e-5


class TestNetworkValidation:
    def test_requires_terminal_softmax(self):
        with pytest.raises(ValueError):
            gl.NetworkSpec([gl.Dense(np.eye(2), np.zeros(2))], (2,), 2)

    def test_requires_single_softmax(self):
        with pytest.raises(ValueError):
            gl.NetworkSpec([gl.Softmax(), gl.Softmax()], (2,), 2)

    def test_skip_edge_shape_compatibility(self):
        rng = np.random.default_rng(0)
        layers = [
            gl.Conv2D(rng.standard_normal((3, 3, 1, 2)), np.zeros(2), 1, 0),  # shrinks
            gl.Add(skip_from=0),
            gl.Softmax(),
        ]
        with pytest.raises(ShapeError):
            gl.NetworkSpec(layers, (4, 4, 1), 8)

    def test_non_finite_params_rejected(self):
        w = np.eye(2)
        w[0, 0] = np.inf
        with pytest.raises(NonFiniteError):
            gl.NetworkSpec([gl.Dense(w, np.zeros(2)), gl.Softmax()], (2,), 2)
