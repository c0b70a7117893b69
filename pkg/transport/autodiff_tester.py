from dataclasses import replace

import numpy as np
import pytest

from transport import autodiff
from transport.autodiff import Graph, GraphError, NestingError, NonFiniteError


def central_difference(fn, x, step=1e-6):
    """Numerical gradient of a scalar function of an array."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        up = x.copy()
        down = x.copy()
        up[idx] += step
        down[idx] -= step
        grad[idx] = (fn(up) - fn(down)) / (2 * step)
    return grad


def relative_error(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    return np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b)))


def _scalar_graph(build, shapes):
    """Build a graph over leaves of the given shapes; returns (graph, leaves, output)."""
    graph = Graph()
    leaves = [graph.leaf(shape=s) for s in shapes]
    return graph, leaves, build(graph, *leaves)


# Each case: (name, builder, leaf shapes). Builders must return a scalar node.
PRIMITIVE_CASES = [
    ("add", lambda g, a, b: g.sum(g.square(g.add(a, b))), [(3, 2), (3, 2)]),
    ("sub", lambda g, a, b: g.sum(g.square(g.sub(a, b))), [(3, 2), (3, 2)]),
    ("mul", lambda g, a, b: g.sum(g.mul(a, b)), [(4,), (4,)]),
    ("matmul", lambda g, a, b: g.sum(g.tanh(g.matmul(a, b))), [(3, 2), (2, 4)]),
    ("affine", lambda g, x, w, b: g.sum(g.tanh(g.affine(x, w, b))), [(5, 3), (3, 2), (2,)]),
    ("leaky_relu", lambda g, a: g.sum(g.mul(g.leaky_relu(a), a)), [(6,)]),
    ("tanh", lambda g, a: g.sum(g.tanh(a)), [(3, 3)]),
    ("square", lambda g, a: g.sum(g.square(a)), [(5,)]),
    ("sum", lambda g, a: g.square(g.sum(a)), [(2, 3)]),
    ("mean", lambda g, a: g.square(g.mean(a)), [(4, 2)]),
    ("dot", lambda g, a, b: g.dot(a, b), [(3, 2), (3, 2)]),
    ("norm_sq", lambda g, a: g.norm_sq(a), [(3,)]),
    ("norm", lambda g, a: g.norm(a), [(3,)]),
    ("rows_and_cols", lambda g, a: g.dot(g.sum_rows(a), g.sum_rows(g.tile_cols(g.sum_cols(a), 2))), [(3, 2)]),
    ("transpose", lambda g, a, b: g.sum(g.tanh(g.matmul(g.transpose(a), b))), [(3, 2), (3, 4)]),
]


class AutodiffEvaluateTester:
    def test_square(self):
        graph = Graph()
        x = graph.leaf(3.0)
        y = graph.mul(x, x)
        assert graph.evaluate(y) == 9.0

    def test_tanh_odd_at_origin(self):
        graph = Graph()
        x = graph.leaf(0.0)
        assert graph.evaluate(graph.tanh(graph.scale(x, 2.0))) == 0.0

    def test_zero_weight_collapse(self):
        graph = Graph()
        x = graph.leaf(np.ones((4, 3)))
        w = graph.leaf(np.zeros((3, 2)))
        b = graph.leaf(np.array([0.5, -1.5]))
        out = graph.evaluate(graph.affine(x, w, b))
        np.testing.assert_array_equal(out, np.tile([0.5, -1.5], (4, 1)))

    def test_shape_mismatch_rejected_at_construction(self):
        graph = Graph()
        a = graph.leaf(np.ones((2, 3)))
        b = graph.leaf(np.ones((2, 2)))
        with pytest.raises(GraphError):
            graph.matmul(a, b)
        with pytest.raises(GraphError):
            graph.add(a, b)

    def test_non_finite_value_names_node(self):
        graph = Graph()
        x = graph.leaf(np.array([-1.0]))
        out = graph.sqrt(x)
        with pytest.raises(NonFiniteError, match=f"node {out}"):
            graph.evaluate(out)

    def test_unassigned_leaf(self):
        graph = Graph()
        x = graph.leaf(shape=(2,))
        with pytest.raises(GraphError):
            graph.evaluate(graph.sum(x))

    def test_assign_invalidates_cache(self):
        graph = Graph()
        x = graph.leaf(2.0)
        y = graph.square(x)
        assert graph.evaluate(y) == 4.0
        graph.assign(x, 5.0)
        assert graph.evaluate(y) == 25.0

    def test_cached_subgraph_not_recomputed(self, monkeypatch):
        graph = Graph()
        x = graph.leaf(np.array([0.5, -1.0]))
        inner = graph.tanh(x)
        graph.evaluate(inner)
        calls = []
        rule = autodiff._RULES["tanh"]
        monkeypatch.setitem(autodiff._RULES, "tanh",
                            replace(rule, forward=lambda a: calls.append(1) or rule.forward(a)))
        out = graph.sum(graph.scale(inner, 2.0))
        np.testing.assert_allclose(graph.evaluate(out), 2 * np.sum(np.tanh([0.5, -1.0])))
        assert calls == []

    def test_evaluation_is_bit_identical(self):
        rng = np.random.default_rng(3)
        graph = Graph()
        x = graph.leaf(rng.normal(size=(8, 3)))
        w = graph.leaf(rng.normal(size=(3, 3)))
        out = graph.mean(graph.tanh(graph.matmul(x, w)))
        first = graph.evaluate(out).copy()
        graph.assign(w, graph.nodes[w].value)
        assert graph.evaluate(out).tobytes() == first.tobytes()


class AutodiffGradientTester:
    def test_power_rule(self):
        graph = Graph()
        x = graph.leaf(3.0)
        (grad,) = graph.gradient(graph.mul(x, x), [x])
        assert grad == pytest.approx(6.0)

    def test_tanh_matches_finite_difference(self):
        graph = Graph()
        x = graph.leaf(0.5)
        (grad,) = graph.gradient(graph.tanh(x), [x])
        fd = central_difference(lambda v: np.tanh(v), 0.5, step=1e-5)
        assert abs(grad - fd) / abs(fd) < 1e-6

    def test_half_inner_product(self):
        graph = Graph()
        w = graph.leaf(np.array([1.0, 2.0]))
        (grad,) = graph.gradient(graph.scale(graph.dot(w, w), 0.5), [w])
        np.testing.assert_allclose(grad, [1.0, 2.0])

    def test_non_scalar_output_rejected(self):
        graph = Graph()
        x = graph.leaf(np.ones(3))
        with pytest.raises(GraphError):
            graph.gradient(graph.square(x), [x])

    def test_unknown_leaf_rejected(self):
        graph = Graph()
        x = graph.leaf(np.ones(3))
        with pytest.raises(GraphError):
            graph.gradient(graph.sum(x), [99])

    def test_gradient_does_not_grow_graph(self):
        graph = Graph()
        x = graph.leaf(np.ones(3))
        out = graph.sum(graph.tanh(x))
        size = len(graph.nodes)
        graph.gradient(out, [x])
        assert len(graph.nodes) == size

    def test_unrelated_leaf_gets_zero(self):
        graph = Graph()
        x = graph.leaf(np.ones(3))
        y = graph.leaf(np.ones((2, 2)))
        grad_x, grad_y = graph.gradient(graph.sum(x), [x, y])
        np.testing.assert_array_equal(grad_y, np.zeros((2, 2)))
        np.testing.assert_array_equal(grad_x, np.ones(3))

    @pytest.mark.parametrize("name,build,shapes", PRIMITIVE_CASES, ids=[c[0] for c in PRIMITIVE_CASES])
    def test_primitive_matches_finite_difference(self, name, build, shapes):
        rng = np.random.default_rng(11)
        graph, leaves, out = _scalar_graph(build, shapes)
        for _ in range(10):
            values = []
            for leaf, shape in zip(leaves, shapes):
                v = rng.normal(size=shape)
                # keep clear of the leaky-relu kink
                v = np.where(np.abs(v) < 1e-3, 0.5, v)
                values.append(v)
                graph.assign(leaf, v)
            grads = graph.gradient(out, leaves)
            for k, leaf in enumerate(leaves):
                def f(v, k=k):
                    graph.assign(leaves[k], v)
                    return float(graph.evaluate(out))
                fd = central_difference(f, values[k])
                graph.assign(leaves[k], values[k])
                assert relative_error(grads[k], fd) < 1e-5, name

    def test_linearity(self):
        rng = np.random.default_rng(5)
        graph = Graph()
        x = graph.leaf(rng.normal(size=(4, 2)))
        f = graph.sum(graph.tanh(x))
        g = graph.norm_sq(x)
        combo = graph.add(graph.scale(f, 2.5), graph.scale(g, -0.75))
        (grad_f,) = graph.gradient(f, [x])
        (grad_g,) = graph.gradient(g, [x])
        (grad_combo,) = graph.gradient(combo, [x])
        np.testing.assert_allclose(grad_combo, 2.5 * grad_f - 0.75 * grad_g, rtol=0, atol=1e-12)


class AutodiffNestingTester:
    def test_gradient_of_half_square(self):
        graph = Graph()
        x = graph.leaf(3.0)
        f = graph.scale(graph.mul(x, x), 0.5)
        g = graph.gradient_node(f, x)
        assert graph.evaluate(g) == pytest.approx(3.0)
        (second,) = graph.gradient(graph.square(g), [x])
        assert second == pytest.approx(6.0, rel=1e-6)

    def test_mixed_partial(self):
        graph = Graph()
        x = graph.leaf(2.0)
        w = graph.leaf(1.0)
        wx = graph.mul(w, x)
        f = graph.scale(graph.mul(wx, wx), 0.5)
        g = graph.gradient_node(f, x)
        assert graph.evaluate(g) == pytest.approx(2.0)
        (dw,) = graph.gradient(graph.square(g), [w])
        assert dw == pytest.approx(16.0, rel=1e-6)

    def test_constant_function(self):
        graph = Graph()
        x = graph.leaf(np.array([1.0, -2.0]))
        c = graph.constant(np.array([3.0, 4.0]))
        f = graph.norm_sq(c)
        g = graph.gradient_node(f, x)
        np.testing.assert_array_equal(graph.evaluate(g), np.zeros(2))
        (second,) = graph.gradient(graph.norm_sq(g), [x])
        np.testing.assert_array_equal(second, np.zeros(2))

    def test_tanh_network_second_order(self):
        # h(w) = || d/dx sum(tanh(x w)) ||^2, compared against finite differences in w
        rng = np.random.default_rng(2)
        graph = Graph()
        x = graph.leaf(rng.normal(size=(3, 2)))
        w = graph.leaf(rng.normal(size=(2, 4)))
        f = graph.sum(graph.tanh(graph.matmul(x, w)))
        h = graph.norm_sq(graph.gradient_node(f, x))
        (grad,) = graph.gradient(h, [w])
        w0 = graph.nodes[w].value.copy()

        def value(v):
            graph.assign(w, v)
            return float(graph.evaluate(h))

        fd = central_difference(value, w0)
        assert relative_error(grad, fd) < 1e-6

    def test_second_nesting_level_rejected(self):
        graph = Graph()
        x = graph.leaf(np.array([1.0, 2.0]))
        g = graph.gradient_node(graph.norm_sq(x), x)
        with pytest.raises(NestingError):
            graph.gradient_node(graph.norm_sq(g), x)
