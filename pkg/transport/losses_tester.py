import numpy as np
import pytest

from sampling.samplers import PointCloud
from transport.autodiff import Graph, GraphError
from transport.embedding import Embedding
from transport.losses import g_loss, gradient_optimality, gradient_penalty, psi_loss, saddle_objective
from transport.nets import Mlp, MlpSpec, QuadraticHead

IDENTITY_Q = Embedding(kind="identity", input_dim=2, output_dim=2)


def linear_net(weights, bias):
    weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    bias = np.asarray(bias, dtype=np.float64)
    spec = MlpSpec(input_dim=weights.shape[0], hidden_dims=[], output_dim=weights.shape[1])
    return Mlp(spec, [(weights, bias)])


def zero_potential(dim=2):
    return linear_net(np.zeros((dim, 1)), [0.0])


def identity_map(dim=2):
    return linear_net(np.eye(dim), np.zeros(dim))


class FreePoints:
    """A 'map' whose outputs are free parameters, one row per batch point."""

    def __init__(self, points):
        self.points = np.array(points, dtype=np.float64)

    input_dim = 2
    output_dim = 2

    def parameters(self):
        return [self.points]

    def parameter_nodes(self, graph):
        return graph.bind_parameters(self, self.parameters())

    def build(self, graph, x):
        return self.parameter_nodes(graph)[0]

    def apply(self, batch):
        return PointCloud.of(self.points)


class PsiLossTester:
    def test_zero_potential(self):
        graph = Graph()
        X = PointCloud.of([[1.0, 2.0]])
        out = psi_loss(graph, zero_potential(), identity_map(), X, X)
        assert graph.evaluate(out) == 0.0

    def test_linear_potential(self):
        graph = Graph()
        psi = linear_net([[1.0], [1.0]], [0.0])
        G = linear_net(np.zeros((2, 2)), np.zeros(2))
        out = psi_loss(graph, psi, G, PointCloud.of([[3.0, 4.0]]), PointCloud.of([[1.0, 1.0]]))
        assert graph.evaluate(out) == 2.0

    def test_matches_straight_line_means(self):
        rng = np.random.default_rng(0)
        psi = Mlp(MlpSpec(input_dim=2, hidden_dims=[8], output_dim=1, seed=1))
        G = Mlp(MlpSpec(input_dim=2, hidden_dims=[8], output_dim=2, seed=2))
        X, Y = PointCloud.of(rng.normal(size=(5, 2))), PointCloud.of(rng.normal(size=(5, 2)))
        graph = Graph()
        value = graph.evaluate(psi_loss(graph, psi, G, X, Y))
        expected = psi.apply(Y).points.mean() - psi.apply(G.apply(X)).points.mean()
        assert abs(value - expected) < 1e-12

    def test_no_gradient_reaches_map(self):
        psi = Mlp(MlpSpec(input_dim=2, hidden_dims=[4], output_dim=1, seed=1))
        G = Mlp(MlpSpec(input_dim=2, hidden_dims=[4], output_dim=2, seed=2))
        X = PointCloud.of(np.ones((3, 2)))
        graph = Graph()
        out = psi_loss(graph, psi, G, X, X)
        for grad in graph.gradient(out, G.parameter_nodes(graph)):
            assert np.all(grad == 0)

    def test_precomputed_pushforward_used(self, monkeypatch):
        rng = np.random.default_rng(4)
        psi = Mlp(MlpSpec(input_dim=2, hidden_dims=[8], output_dim=1, seed=1))
        G = Mlp(MlpSpec(input_dim=2, hidden_dims=[8], output_dim=2, seed=2))
        X, Y = PointCloud.of(rng.normal(size=(6, 2))), PointCloud.of(rng.normal(size=(6, 2)))
        pushed = G.apply(X)
        graph = Graph()
        expected = graph.evaluate(psi_loss(graph, psi, G, X, Y))
        monkeypatch.setattr(G, "apply", lambda batch: pytest.fail("G.apply called again"))
        graph = Graph()
        assert graph.evaluate(psi_loss(graph, psi, G, X, Y, pushed=pushed)) == expected

    def test_dimension_mismatch(self):
        with pytest.raises(GraphError):
            psi_loss(Graph(), zero_potential(3), identity_map(), PointCloud.of([[1.0, 2.0]]), PointCloud.of([[1.0, 2.0]]))


class GLossTester:
    def test_zero_potential_identity_map(self):
        graph = Graph()
        out = g_loss(graph, zero_potential(), identity_map(), IDENTITY_Q, PointCloud.of([[1.0, 1.0]]))
        assert graph.evaluate(out) == -2.0

    def test_half_square_potential(self):
        graph = Graph()
        out = g_loss(graph, QuadraticHead(np.eye(2)), identity_map(), IDENTITY_Q, PointCloud.of([[1.0, 1.0]]))
        assert graph.evaluate(out) == pytest.approx(-1.0, abs=1e-15)

    def test_pointwise_minimizer_is_embedding(self):
        rng = np.random.default_rng(4)
        X = PointCloud.of(rng.normal(size=(6, 2)))
        free = FreePoints(rng.normal(size=(6, 2)) * 3)
        psi = QuadraticHead(np.eye(2))
        n = len(X)
        for _ in range(50):
            graph = Graph()
            (grad,) = graph.gradient(g_loss(graph, psi, free, IDENTITY_Q, X), free.parameter_nodes(graph))
            free.points = free.points - 0.5 * n * grad
        assert np.max(np.abs(free.points - X.points)) < 1e-4

    def test_no_gradient_reaches_potential_leaves_of_map_loss(self):
        # G gets gradient, a fixed potential's head has none to receive
        G = Mlp(MlpSpec(input_dim=2, hidden_dims=[4], output_dim=2, seed=3))
        graph = Graph()
        out = g_loss(graph, QuadraticHead(np.eye(2)), G, IDENTITY_Q, PointCloud.of(np.ones((2, 2))))
        grads = graph.gradient(out, G.parameter_nodes(graph))
        assert any(np.any(g != 0) for g in grads)


class GradientPenaltyTester:
    def test_unit_gradient_linear_potential(self):
        psi = linear_net([[0.6], [0.8]], [0.3])
        rng = np.random.default_rng(0)
        graph = Graph()
        fake, real = PointCloud.of(rng.normal(size=(4, 2))), PointCloud.of(rng.normal(size=(4, 2)))
        assert abs(graph.evaluate(gradient_penalty(graph, psi, fake, real, rng))) < 1e-12

    def test_zero_potential(self):
        rng = np.random.default_rng(0)
        graph = Graph()
        cloud = PointCloud.of(rng.normal(size=(3, 2)))
        assert graph.evaluate(gradient_penalty(graph, zero_potential(), cloud, cloud, rng)) == 1.0

    def test_one_dimensional_slope_two(self):
        psi = linear_net([[2.0]], [0.0])
        rng = np.random.default_rng(1)
        graph = Graph()
        fake, real = PointCloud.of(rng.normal(size=(5, 1))), PointCloud.of(rng.normal(size=(5, 1)))
        assert abs(graph.evaluate(gradient_penalty(graph, psi, fake, real, rng)) - 1.0) < 1e-12

    def test_cardinality_mismatch(self):
        with pytest.raises(GraphError):
            gradient_penalty(Graph(), zero_potential(), PointCloud.of(np.zeros((2, 2))),
                             PointCloud.of(np.zeros((3, 2))), np.random.default_rng(0))

    def test_parameter_gradient_matches_finite_difference(self):
        psi = Mlp(MlpSpec(input_dim=2, hidden_dims=[5], output_dim=1, activation="tanh", seed=4))
        data = np.random.default_rng(8)
        fake, real = PointCloud.of(data.normal(size=(4, 2))), PointCloud.of(data.normal(size=(4, 2)))

        def value():
            graph = Graph()
            return float(graph.evaluate(gradient_penalty(graph, psi, fake, real, np.random.default_rng(3))))

        graph = Graph()
        out = gradient_penalty(graph, psi, fake, real, np.random.default_rng(3))
        grads = graph.gradient(out, psi.parameter_nodes(graph))
        w = psi.layers[1][0]
        step = 1e-6
        for idx in [(0, 0), (3, 0)]:
            orig = w[idx]
            w[idx] = orig + step
            up = value()
            w[idx] = orig - step
            down = value()
            w[idx] = orig
            assert abs(grads[2][idx] - (up - down) / (2 * step)) < 1e-6


class GradientOptimalityTester:
    def test_linear_potential(self):
        a = np.array([3.0, -4.0])
        graph = Graph()
        X = PointCloud.of(np.random.default_rng(2).normal(size=(7, 2)))
        out = gradient_optimality(graph, linear_net(a[:, None], [0.0]), identity_map(), X)
        assert abs(graph.evaluate(out) - 5.0) < 1e-12

    def test_symmetric_batch_cancels(self):
        graph = Graph()
        X = PointCloud.of([[0.7, -1.3], [-0.7, 1.3]])
        out = gradient_optimality(graph, QuadraticHead(np.eye(2)), identity_map(), X)
        assert abs(graph.evaluate(out)) < 1e-12

    def test_mean_of_gradients(self):
        graph = Graph()
        X = PointCloud.of([[1.0, 0.0], [0.0, 1.0]])
        out = gradient_optimality(graph, QuadraticHead(np.eye(2)), identity_map(), X)
        assert abs(graph.evaluate(out) - np.sqrt(0.5)) < 1e-12

    def test_precomputed_pushforward_used(self, monkeypatch):
        G = identity_map()
        X = PointCloud.of([[1.0, 0.0], [0.0, 1.0]])
        pushed = G.apply(X)
        monkeypatch.setattr(G, "apply", lambda batch: pytest.fail("G.apply called again"))
        graph = Graph()
        out = gradient_optimality(graph, QuadraticHead(np.eye(2)), G, X, pushed=pushed)
        assert abs(graph.evaluate(out) - np.sqrt(0.5)) < 1e-12


class SaddleObjectiveTester:
    def test_relation_to_map_loss(self):
        rng = np.random.default_rng(6)
        psi = Mlp(MlpSpec(input_dim=2, hidden_dims=[6], output_dim=1, seed=1))
        G = Mlp(MlpSpec(input_dim=2, hidden_dims=[6], output_dim=2, seed=2))
        X, Y = PointCloud.of(rng.normal(size=(9, 2))), PointCloud.of(rng.normal(size=(9, 2)))
        graph = Graph()
        map_loss = float(graph.evaluate(g_loss(graph, psi, G, IDENTITY_Q, X)))
        assert abs(saddle_objective(psi, G, IDENTITY_Q, X, Y) - (-map_loss + psi.apply(Y).points.mean())) < 1e-12

    def test_sup_of_sum_is_sum_of_sups(self):
        # psi = 1/2||y||^2: the per-point maximizer of <x, y> - psi(y) is y = x
        rng = np.random.default_rng(7)
        X, Y = PointCloud.of(rng.normal(size=(10, 2))), PointCloud.of(rng.normal(size=(10, 2)))
        psi = QuadraticHead(np.eye(2))
        batch_value = saddle_objective(psi, FreePoints(X.points), IDENTITY_Q, X, Y)
        per_point_sups = 0.5 * np.sum(X.points ** 2, axis=1)
        expected = per_point_sups.mean() + psi.apply(Y).points.mean()
        assert abs(batch_value - expected) < 1e-9
        # any other batch of outputs does no better
        other = saddle_objective(psi, FreePoints(X.points + rng.normal(size=(10, 2)) * 0.1), IDENTITY_Q, X, Y)
        assert other < batch_value
