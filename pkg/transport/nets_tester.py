import numpy as np
import pytest
from pydantic import ValidationError

from sampling.samplers import PointCloud
from transport.autodiff import Graph, GraphError
from transport.nets import Mlp, MlpSpec, QuadraticHead


def straight_line_forward(mlp, x):
    """Reference forward pass written without the graph engine."""
    h = x
    for k, (w, b) in enumerate(mlp.layers):
        h = h @ w + b
        if k < len(mlp.layers) - 1:
            h = np.where(h > 0, h, mlp.spec.negative_slope * h)
    return h


class MlpInitTester:
    def test_seeded_determinism(self):
        spec = MlpSpec(input_dim=2, output_dim=2, seed=7)
        a, b = Mlp(spec), Mlp(spec)
        for p, q in zip(a.parameters(), b.parameters()):
            assert p.tobytes() == q.tobytes()

    def test_default_architecture(self):
        mlp = Mlp(MlpSpec(input_dim=2, output_dim=1))
        assert [w.shape for w, _ in mlp.layers] == [(2, 128), (128, 128), (128, 128), (128, 1)]
        assert all(np.all(b == 0) for _, b in mlp.layers)

    def test_glorot_bound(self):
        mlp = Mlp(MlpSpec(input_dim=2, hidden_dims=[4], output_dim=1, seed=1))
        # the 2->4 layer has bound sqrt(6/6) = 1
        assert np.all(np.abs(mlp.layers[0][0]) <= 1.0)
        for w, _ in mlp.layers:
            fan_in, fan_out = w.shape
            assert np.all(np.abs(w) <= np.sqrt(6.0 / (fan_in + fan_out)))

    def test_weight_mean_near_zero(self):
        mlp = Mlp(MlpSpec(input_dim=8, hidden_dims=[8] * 157, output_dim=8, seed=3))
        weights = np.concatenate([w.ravel() for w, _ in mlp.layers])
        assert weights.size >= 10_000
        # uniform on [-s, s] with s = sqrt(6/16) has variance s^2/3
        stderr = np.sqrt(6.0 / 16 / 3 / weights.size)
        assert abs(weights.mean()) < 3 * stderr

    def test_zero_dimension_rejected(self):
        with pytest.raises(ValidationError):
            MlpSpec(input_dim=0, output_dim=1)
        with pytest.raises(ValidationError):
            MlpSpec(input_dim=2, hidden_dims=[4, 0], output_dim=1)


class MlpApplyTester:
    def test_zero_weights_give_bias(self):
        spec = MlpSpec(input_dim=2, hidden_dims=[3], output_dim=2)
        layers = [(np.zeros((2, 3)), np.zeros(3)), (np.zeros((3, 2)), np.array([1.5, -2.0]))]
        out = Mlp(spec, layers).apply(PointCloud.of(np.random.default_rng(0).normal(size=(5, 2))))
        np.testing.assert_array_equal(out.points, np.tile([1.5, -2.0], (5, 1)))

    def test_identity_layer(self):
        spec = MlpSpec(input_dim=2, hidden_dims=[], output_dim=2)
        mlp = Mlp(spec, [(np.eye(2), np.zeros(2))])
        np.testing.assert_array_equal(mlp.apply(PointCloud.of([[1.0, 2.0]])).points, [[1.0, 2.0]])

    def test_matches_straight_line_implementation(self):
        mlp = Mlp(MlpSpec(input_dim=2, output_dim=2, seed=11))
        x = np.random.default_rng(1).normal(size=(16, 2))
        assert mlp.apply(PointCloud.of(x)).points.tobytes() == straight_line_forward(mlp, x).tobytes()

    def test_dimension_mismatch(self):
        mlp = Mlp(MlpSpec(input_dim=3, output_dim=1))
        with pytest.raises(GraphError):
            mlp.apply(PointCloud.of(np.zeros((2, 2))))

    def test_homogeneous_when_linear(self):
        spec = MlpSpec(input_dim=2, hidden_dims=[5, 5], output_dim=3, negative_slope=1.0, seed=2)
        mlp = Mlp(spec)
        x = np.random.default_rng(2).normal(size=(4, 2))
        np.testing.assert_allclose(mlp.apply(PointCloud.of(2.5 * x)).points,
                                   2.5 * mlp.apply(PointCloud.of(x)).points, rtol=1e-12, atol=1e-12)


class MlpInputGradientTester:
    def test_linear_potential(self):
        a = np.array([0.3, -1.2, 2.0])
        mlp = Mlp(MlpSpec(input_dim=3, hidden_dims=[], output_dim=1), [(a[:, None], np.array([0.7]))])
        grads = mlp.gradient_at(np.random.default_rng(0).normal(size=(6, 3)))
        np.testing.assert_array_equal(grads, np.tile(a, (6, 1)))

    def test_quadratic_head(self):
        head = QuadraticHead(np.eye(2))
        y = np.array([[1.0, -2.0], [0.5, 3.0]])
        np.testing.assert_allclose(head.gradient_at(y), y)

    def test_random_network_matches_finite_difference(self):
        mlp = Mlp(MlpSpec(input_dim=2, output_dim=1, seed=5))
        points = np.random.default_rng(4).normal(size=(5, 2))
        grads = mlp.gradient_at(points)
        step = 1e-6
        for i, p in enumerate(points):
            for j in range(2):
                up, down = p.copy(), p.copy()
                up[j] += step
                down[j] -= step
                fd = (straight_line_forward(mlp, up[None])[0, 0] - straight_line_forward(mlp, down[None])[0, 0]) / (2 * step)
                assert abs(grads[i, j] - fd) / max(1.0, abs(fd)) < 1e-5

    def test_vector_network_rejected(self):
        mlp = Mlp(MlpSpec(input_dim=2, output_dim=2))
        graph = Graph()
        with pytest.raises(GraphError):
            mlp.input_gradient(graph, graph.leaf(np.zeros((1, 2))))

    def test_parameter_gradient_through_input_gradient(self):
        # d/dW of ||grad_x psi||^2 for a tanh network, checked by finite differences
        spec = MlpSpec(input_dim=2, hidden_dims=[4], output_dim=1, activation="tanh", seed=9)
        mlp = Mlp(spec)
        x = np.random.default_rng(6).normal(size=(3, 2))

        def penalty_value():
            graph = Graph()
            leaf = graph.leaf(x)
            return float(graph.evaluate(graph.norm_sq(mlp.input_gradient(graph, leaf))))

        graph = Graph()
        leaf = graph.leaf(x)
        out = graph.norm_sq(mlp.input_gradient(graph, leaf))
        grads = graph.gradient(out, mlp.parameter_nodes(graph))
        w = mlp.layers[0][0]
        step = 1e-6
        for idx in [(0, 0), (1, 3)]:
            orig = w[idx]
            w[idx] = orig + step
            up = penalty_value()
            w[idx] = orig - step
            down = penalty_value()
            w[idx] = orig
            fd = (up - down) / (2 * step)
            assert abs(grads[0][idx] - fd) / max(1.0, abs(fd)) < 1e-5
