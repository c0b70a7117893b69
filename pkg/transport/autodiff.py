"""
Reverse-mode automatic differentiation over dense float64 tensors.

A Graph records operations as nodes (op kind, input node ids, cached value).
Node ids are handed out in creation order, so inputs always precede the
nodes that consume them and the id order is a valid topological order.

Backward passes are themselves built out of graph nodes. That is what makes
`gradient_node` work: the returned gradient is an ordinary node that can be
composed further (norms, means) and differentiated once more with respect to
the original leaves. Only one such nesting level is supported.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

# Tensors are plain row-major float64 numpy arrays.
Tensor = np.ndarray

logger = logging.getLogger(__name__)

LEAKY_RELU_SLOPE = 0.01
MAX_NESTING = 1


class GraphError(ValueError):
    """Structural misuse of a graph: bad shapes, unknown leaves, non-scalar outputs."""


class NonFiniteError(GraphError):
    """A node produced NaN or Inf."""


class NestingError(GraphError):
    """More than one level of nested differentiation was requested."""


@dataclass
class Node:
    """One recorded operation."""
    id: int
    op: str
    inputs: Tuple[int, ...]
    shape: Tuple[int, ...]
    attrs: Dict[str, Any] = field(default_factory=dict)
    value: Optional[Tensor] = None
    level: int = 0
    is_leaf: bool = False
    name: str = ""


@dataclass(frozen=True)
class _Rule:
    forward: Callable[..., Tensor]
    shape: Callable[..., Tuple[int, ...]]
    # vjp(graph, node, adjoint_id) -> one entry per input: node id or None (zero)
    vjp: Callable[["Graph", Node, int], List[Optional[int]]]


def _same_shape(op: str):
    def check(a, b, **_):
        if a != b:
            raise GraphError(f"{op}: shape mismatch {a} vs {b}")
        return a
    return check


def _unary_shape(a, **_):
    return a


def _scalar_shape(*_, **__):
    return ()


def _matmul_shape(a, b, **_):
    if len(a) != 2 or len(b) != 2 or a[1] != b[0]:
        raise GraphError(f"matmul: incompatible shapes {a} and {b}")
    return (a[0], b[1])


def _transpose_shape(a, **_):
    if len(a) != 2:
        raise GraphError(f"transpose expects a matrix, got shape {a}")
    return (a[1], a[0])


def _affine_shape(x, w, b, **_):
    out = _matmul_shape(x, w)
    if b != (w[1],):
        raise GraphError(f"affine: bias shape {b} does not match output width {w[1]}")
    return out


def _add_bias_shape(a, b, **_):
    if len(a) != 2 or b != (a[1],):
        raise GraphError(f"add_bias: shapes {a} and {b} are incompatible")
    return a


def _sum_rows_shape(a, **_):
    if len(a) != 2:
        raise GraphError(f"sum_rows expects a matrix, got shape {a}")
    return (a[1],)


def _sum_cols_shape(a, **_):
    if len(a) != 2:
        raise GraphError(f"sum_cols expects a matrix, got shape {a}")
    return (a[0],)


def _tile_rows_shape(a, rows, **_):
    if len(a) != 1:
        raise GraphError(f"tile_rows expects a vector, got shape {a}")
    return (rows, a[0])


def _tile_cols_shape(a, cols, **_):
    if len(a) != 1:
        raise GraphError(f"tile_cols expects a vector, got shape {a}")
    return (a[0], cols)


def _fill_shape(a, shape, **_):
    if a != ():
        raise GraphError(f"fill expects a scalar, got shape {a}")
    return tuple(shape)


def _leaky_mask(x: Tensor, slope: float) -> Tensor:
    return np.where(x > 0, 1.0, slope)


def _safe_reciprocal(x: Tensor) -> Tensor:
    out = np.zeros_like(x)
    np.divide(1.0, x, out=out, where=x != 0)
    return out


# VJP rules. Each builds the input adjoints out of graph ops so the backward
# pass can be differentiated again.

def _vjp_add(g: "Graph", n: Node, adj: int):
    return [adj, adj]


def _vjp_sub(g, n, adj):
    return [adj, g.scale(adj, -1.0)]


def _vjp_mul(g, n, adj):
    a, b = n.inputs
    return [g.mul(adj, b), g.mul(adj, a)]


def _vjp_scale(g, n, adj):
    return [g.scale(adj, n.attrs["factor"])]


def _vjp_shift(g, n, adj):
    return [adj]


def _vjp_matmul(g, n, adj):
    a, b = n.inputs
    return [g.matmul(adj, g.transpose(b)), g.matmul(g.transpose(a), adj)]


def _vjp_transpose(g, n, adj):
    return [g.transpose(adj)]


def _vjp_affine(g, n, adj):
    x, w, _ = n.inputs
    return [g.matmul(adj, g.transpose(w)), g.matmul(g.transpose(x), adj), g.sum_rows(adj)]


def _vjp_add_bias(g, n, adj):
    return [adj, g.sum_rows(adj)]


def _vjp_sum_rows(g, n, adj):
    return [g.tile_rows(adj, g.nodes[n.inputs[0]].shape[0])]


def _vjp_sum_cols(g, n, adj):
    return [g.tile_cols(adj, g.nodes[n.inputs[0]].shape[1])]


def _vjp_tile_rows(g, n, adj):
    return [g.sum_rows(adj)]


def _vjp_tile_cols(g, n, adj):
    return [g.sum_cols(adj)]


def _vjp_sum(g, n, adj):
    return [g.fill(adj, g.nodes[n.inputs[0]].shape)]


def _vjp_fill(g, n, adj):
    return [g.sum(adj)]


def _vjp_mean(g, n, adj):
    shape = g.nodes[n.inputs[0]].shape
    return [g.scale(g.fill(adj, shape), 1.0 / max(1, int(np.prod(shape))))]


def _vjp_dot(g, n, adj):
    a, b = n.inputs
    spread = g.fill(adj, g.nodes[a].shape)
    return [g.mul(spread, b), g.mul(spread, a)]


def _vjp_norm_sq(g, n, adj):
    a = n.inputs[0]
    return [g.scale(g.mul(g.fill(adj, g.nodes[a].shape), a), 2.0)]


def _vjp_square(g, n, adj):
    return [g.scale(g.mul(adj, n.inputs[0]), 2.0)]


def _vjp_tanh(g, n, adj):
    return [g.tanh_backward(n.id, adj)]


def _vjp_tanh_backward(g, n, adj):
    y, upstream = n.inputs
    # d/dy [u * (1 - y^2)] = -2 y u
    return [g.mul(g.scale(g.mul(y, upstream), -2.0), adj), g.tanh_backward(y, adj)]


def _vjp_leaky_relu(g, n, adj):
    return [g.leaky_relu_backward(n.inputs[0], adj, n.attrs["slope"])]


def _vjp_leaky_relu_backward(g, n, adj):
    x, _ = n.inputs
    # piecewise constant mask: zero second derivative almost everywhere
    return [None, g.leaky_relu_backward(x, adj, n.attrs["slope"])]


def _vjp_sqrt(g, n, adj):
    return [g.mul(adj, g.scale(g.safe_reciprocal(n.id), 0.5))]


def _vjp_safe_reciprocal(g, n, adj):
    return [g.mul(adj, g.scale(g.square(n.id), -1.0))]


_RULES: Dict[str, _Rule] = {
    "add": _Rule(lambda a, b: a + b, _same_shape("add"), _vjp_add),
    "sub": _Rule(lambda a, b: a - b, _same_shape("sub"), _vjp_sub),
    "mul": _Rule(lambda a, b: a * b, _same_shape("mul"), _vjp_mul),
    "scale": _Rule(lambda a, factor: a * factor, _unary_shape, _vjp_scale),
    "shift": _Rule(lambda a, offset: a + offset, _unary_shape, _vjp_shift),
    "matmul": _Rule(lambda a, b: a @ b, _matmul_shape, _vjp_matmul),
    "transpose": _Rule(lambda a: a.T, _transpose_shape, _vjp_transpose),
    "affine": _Rule(lambda x, w, b: x @ w + b, _affine_shape, _vjp_affine),
    "add_bias": _Rule(lambda a, b: a + b, _add_bias_shape, _vjp_add_bias),
    "sum_rows": _Rule(lambda a: a.sum(axis=0), _sum_rows_shape, _vjp_sum_rows),
    "sum_cols": _Rule(lambda a: a.sum(axis=1), _sum_cols_shape, _vjp_sum_cols),
    "tile_rows": _Rule(lambda a, rows: np.tile(a, (rows, 1)), _tile_rows_shape, _vjp_tile_rows),
    "tile_cols": _Rule(lambda a, cols: np.tile(a[:, None], (1, cols)), _tile_cols_shape, _vjp_tile_cols),
    "sum": _Rule(lambda a: a.sum(), _scalar_shape, _vjp_sum),
    "fill": _Rule(lambda a, shape: np.full(shape, a), _fill_shape, _vjp_fill),
    "mean": _Rule(lambda a: a.mean() if a.size else np.zeros(()), _scalar_shape, _vjp_mean),
    "dot": _Rule(lambda a, b: np.sum(a * b), _same_shape("dot"), _vjp_dot),
    "norm_sq": _Rule(lambda a: np.sum(a * a), _scalar_shape, _vjp_norm_sq),
    "square": _Rule(lambda a: a * a, _unary_shape, _vjp_square),
    "tanh": _Rule(np.tanh, _unary_shape, _vjp_tanh),
    "tanh_backward": _Rule(lambda y, u: u * (1.0 - y * y), _same_shape("tanh_backward"), _vjp_tanh_backward),
    "leaky_relu": _Rule(lambda a, slope: np.where(a > 0, a, slope * a), _unary_shape, _vjp_leaky_relu),
    "leaky_relu_backward": _Rule(lambda x, u, slope: u * _leaky_mask(x, slope),
                                 _same_shape("leaky_relu_backward"), _vjp_leaky_relu_backward),
    "sqrt": _Rule(np.sqrt, _unary_shape, _vjp_sqrt),
    "safe_reciprocal": _Rule(_safe_reciprocal, _unary_shape, _vjp_safe_reciprocal),
}

# "dot" has a scalar output even though its shape check compares the inputs.
_SCALAR_OPS = {"dot"}


class Graph:
    """
    Differentiable computation tape.

    Leaves hold values assigned from outside (parameters, data batches);
    every other node is computed lazily by `evaluate` and cached until a
    leaf is reassigned. A Graph is meant to be used from a single thread.
    """

    def __init__(self):
        self.nodes: List[Node] = []
        self._bound: Dict[int, List[int]] = {}
        self._nesting = 0

    # ------------------------------------------------------------------
    # leaves

    def leaf(self, value: Optional[Any] = None, shape: Optional[Sequence[int]] = None,
             name: str = "") -> int:
        """Add a leaf. Either a value or a shape must be given."""
        if value is None and shape is None:
            raise GraphError("a leaf needs a value or a shape")
        if value is not None:
            value = np.array(value, dtype=np.float64)
            shape = value.shape
        node = self._append("leaf", (), tuple(int(s) for s in shape), {}, is_leaf=True, name=name)
        if value is not None:
            if not np.all(np.isfinite(value)):
                raise NonFiniteError(f"leaf {node} '{name}' created with non-finite values")
            # a fresh leaf has no consumers yet, so no cache needs dropping
            self.nodes[node].value = value
        return node

    def constant(self, value: Any, name: str = "") -> int:
        return self.leaf(value=value, name=name)

    def zeros(self, shape: Sequence[int]) -> int:
        return self.leaf(value=np.zeros(tuple(shape)), name="zeros")

    def assign(self, leaf: int, value: Any) -> None:
        """Set a leaf value; cached values of derived nodes are dropped."""
        node = self._node(leaf)
        if not node.is_leaf:
            raise GraphError(f"node {leaf} ({node.op}) is not a leaf")
        value = np.array(value, dtype=np.float64)
        if value.shape != node.shape:
            raise GraphError(f"leaf {leaf} expects shape {node.shape}, got {value.shape}")
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"leaf {leaf} '{node.name}' assigned non-finite values")
        node.value = value
        for other in self.nodes:
            if not other.is_leaf:
                other.value = None

    def bind_parameters(self, owner: object, arrays: Sequence[Tensor]) -> List[int]:
        """Register an owner's parameter arrays as leaves once per graph."""
        key = id(owner)
        if key not in self._bound:
            self._bound[key] = [self.leaf(value=a, name=f"param{i}") for i, a in enumerate(arrays)]
        return self._bound[key]

    # ------------------------------------------------------------------
    # primitive ops

    def add(self, a: int, b: int) -> int:
        return self._op("add", a, b)

    def sub(self, a: int, b: int) -> int:
        return self._op("sub", a, b)

    def mul(self, a: int, b: int) -> int:
        return self._op("mul", a, b)

    def scale(self, a: int, factor: float) -> int:
        return self._op("scale", a, factor=float(factor))

    def shift(self, a: int, offset: float) -> int:
        return self._op("shift", a, offset=float(offset))

    def matmul(self, a: int, b: int) -> int:
        return self._op("matmul", a, b)

    def transpose(self, a: int) -> int:
        return self._op("transpose", a)

    def affine(self, x: int, w: int, b: int) -> int:
        """x @ w + b with the bias broadcast over rows."""
        return self._op("affine", x, w, b)

    def add_bias(self, a: int, b: int) -> int:
        return self._op("add_bias", a, b)

    def sum_rows(self, a: int) -> int:
        return self._op("sum_rows", a)

    def sum_cols(self, a: int) -> int:
        return self._op("sum_cols", a)

    def tile_rows(self, a: int, rows: int) -> int:
        return self._op("tile_rows", a, rows=int(rows))

    def tile_cols(self, a: int, cols: int) -> int:
        return self._op("tile_cols", a, cols=int(cols))

    def sum(self, a: int) -> int:
        return self._op("sum", a)

    def fill(self, a: int, shape: Sequence[int]) -> int:
        return self._op("fill", a, shape=tuple(int(s) for s in shape))

    def mean(self, a: int) -> int:
        return self._op("mean", a)

    def dot(self, a: int, b: int) -> int:
        return self._op("dot", a, b)

    def norm_sq(self, a: int) -> int:
        return self._op("norm_sq", a)

    def square(self, a: int) -> int:
        return self._op("square", a)

    def tanh(self, a: int) -> int:
        return self._op("tanh", a)

    def tanh_backward(self, y: int, upstream: int) -> int:
        return self._op("tanh_backward", y, upstream)

    def leaky_relu(self, a: int, slope: float = LEAKY_RELU_SLOPE) -> int:
        return self._op("leaky_relu", a, slope=float(slope))

    def leaky_relu_backward(self, x: int, upstream: int, slope: float = LEAKY_RELU_SLOPE) -> int:
        return self._op("leaky_relu_backward", x, upstream, slope=float(slope))

    def sqrt(self, a: int) -> int:
        return self._op("sqrt", a)

    def safe_reciprocal(self, a: int) -> int:
        """1/a with zero where a == 0."""
        return self._op("safe_reciprocal", a)

    def norm(self, a: int) -> int:
        """Euclidean norm of a whole tensor."""
        return self.sqrt(self.norm_sq(a))

    # ------------------------------------------------------------------
    # evaluation and differentiation

    def shape(self, node: int) -> Tuple[int, ...]:
        return self._node(node).shape

    def evaluate(self, output: int) -> Tensor:
        """
        Compute (and cache) the value of `output`.

        Args:
            output: node id to evaluate

        Returns:
            The node value. Intermediate values stay cached for the backward pass.
        """
        self._node(output)
        for nid in self._uncached(output):
            node = self.nodes[nid]
            if node.is_leaf:
                raise GraphError(f"leaf {nid} '{node.name}' has no value assigned")
            args = [self.nodes[i].value for i in node.inputs]
            with np.errstate(all="ignore"):
                value = np.asarray(_RULES[node.op].forward(*args, **node.attrs), dtype=np.float64)
            if value.shape != node.shape:
                raise GraphError(f"node {nid} ({node.op}) produced shape {value.shape}, expected {node.shape}")
            if not np.all(np.isfinite(value)):
                raise NonFiniteError(f"node {nid} ({node.op}) produced non-finite values")
            node.value = value
        return self.nodes[output].value

    def gradient(self, output: int, wrt: Sequence[int]) -> List[Tensor]:
        """
        Numeric gradients of a scalar node with respect to leaves.

        Args:
            output: scalar node
            wrt: leaf ids

        Returns:
            One array per leaf, shaped like the leaf.
        """
        self._check_scalar(output)
        for leaf in wrt:
            if not self._node(leaf).is_leaf:
                raise GraphError(f"node {leaf} is not a leaf")
        self.evaluate(output)

        mark = len(self.nodes)
        try:
            adjoints = self._backward(output, list(wrt), level=self._max_level(output) + 1)
            grads = [self.evaluate(a).copy() for a in adjoints]
        finally:
            # scratch adjoint nodes are discarded; the graph keeps its size
            del self.nodes[mark:]
        return grads

    def gradient_node(self, output: int, wrt_leaf: int) -> int:
        """
        Gradient of a scalar node as a new, composable node.

        The returned node can be fed into further ops and differentiated once
        more with `gradient`. Calling this on an output that already depends
        on a gradient node raises NestingError.
        """
        self._check_scalar(output)
        if not self._node(wrt_leaf).is_leaf:
            raise GraphError(f"node {wrt_leaf} is not a leaf")
        level = self._max_level(output) + 1
        if level > MAX_NESTING:
            raise NestingError(
                f"node {output} already depends on a gradient node; only {MAX_NESTING} nesting level is supported")
        return self._backward(output, [wrt_leaf], level=level)[0]

    # ------------------------------------------------------------------
    # internals

    def _node(self, nid: int) -> Node:
        if not isinstance(nid, (int, np.integer)) or nid < 0 or nid >= len(self.nodes):
            raise GraphError(f"node {nid} is not in the graph")
        return self.nodes[nid]

    def _check_scalar(self, output: int) -> None:
        shape = self._node(output).shape
        if shape != ():
            raise GraphError(f"output node {output} must be scalar, has shape {shape}")

    def _append(self, op, inputs, shape, attrs, is_leaf=False, name=""):
        nid = len(self.nodes)
        self.nodes.append(Node(id=nid, op=op, inputs=inputs, shape=shape, attrs=attrs,
                               level=self._nesting, is_leaf=is_leaf, name=name))
        return nid

    def _op(self, op: str, *inputs: int, **attrs) -> int:
        shapes = [self._node(i).shape for i in inputs]
        shape = _RULES[op].shape(*shapes, **attrs)
        if op in _SCALAR_OPS:
            shape = ()
        level = max((self.nodes[i].level for i in inputs), default=0)
        nid = self._append(op, tuple(int(i) for i in inputs), tuple(shape), attrs)
        self.nodes[nid].level = max(level, self._nesting)
        return nid

    def _uncached(self, output: int) -> List[int]:
        """Ancestors of output still lacking a value, in topological order."""
        seen = set()
        stack = [output]
        while stack:
            nid = stack.pop()
            if nid in seen or self.nodes[nid].value is not None:
                continue
            seen.add(nid)
            stack.extend(self.nodes[nid].inputs)
        return sorted(seen)

    def _max_level(self, output: int) -> int:
        # _op keeps every node at or above the level of its inputs
        return self.nodes[output].level

    def _backward(self, output: int, wrt: List[int], level: int) -> List[int]:
        targets = set(wrt)
        depends: Dict[int, bool] = {}
        for nid in range(output + 1):
            node = self.nodes[nid]
            depends[nid] = nid in targets or any(depends[i] for i in node.inputs)

        previous = self._nesting
        self._nesting = level
        try:
            adjoint: Dict[int, int] = {output: self.constant(np.ones(()), name="seed")}
            for nid in range(output, -1, -1):
                node = self.nodes[nid]
                if nid not in adjoint or node.is_leaf or not depends[nid]:
                    continue
                contributions = _RULES[node.op].vjp(self, node, adjoint[nid])
                for inp, contrib in zip(node.inputs, contributions):
                    if contrib is None or not depends[inp]:
                        continue
                    adjoint[inp] = contrib if inp not in adjoint else self.add(adjoint[inp], contrib)
            return [adjoint[w] if w in adjoint else self.zeros(self.nodes[w].shape) for w in wrt]
        finally:
            self._nesting = previous
