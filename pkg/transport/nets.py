"""
Dense feed-forward networks for the transport map G and the potential psi.
"""

import logging
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveInt

from sampling.samplers import PointCloud
from transport.autodiff import LEAKY_RELU_SLOPE, Graph, GraphError

logger = logging.getLogger(__name__)


class MlpSpec(BaseModel):
    """Architecture and initialization seed of an Mlp."""
    model_config = ConfigDict(extra="forbid")

    input_dim: PositiveInt
    hidden_dims: List[PositiveInt] = Field(default_factory=lambda: [128, 128, 128])
    output_dim: PositiveInt
    activation: Literal["leaky_relu", "tanh"] = "leaky_relu"
    negative_slope: float = Field(default=LEAKY_RELU_SLOPE, gt=0.0)
    seed: int = Field(default=0, ge=0)

    @property
    def dims(self) -> List[int]:
        return [self.input_dim, *self.hidden_dims, self.output_dim]


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Mlp:
    """
    Multi-layer perceptron with a linear final layer.

    Weights are stored as (fan_in, fan_out) matrices so a batch X of shape
    (n, fan_in) maps to X @ W + b.
    """

    def __init__(self, spec: MlpSpec, layers: Optional[Sequence[Tuple[np.ndarray, np.ndarray]]] = None):
        self.spec = spec
        self.logger = logging.getLogger(__name__)
        dims = spec.dims
        if layers is None:
            rng = np.random.default_rng(spec.seed)
            layers = [(glorot_uniform(rng, a, b), np.zeros(b)) for a, b in zip(dims[:-1], dims[1:])]
        self.layers = [(np.array(w, dtype=np.float64), np.array(b, dtype=np.float64)) for w, b in layers]
        self._check_layers()

    def _check_layers(self):
        dims = self.spec.dims
        if len(self.layers) != len(dims) - 1:
            raise GraphError(f"expected {len(dims) - 1} layers for dims {dims}, got {len(self.layers)}")
        for k, (w, b) in enumerate(self.layers):
            if w.shape != (dims[k], dims[k + 1]) or b.shape != (dims[k + 1],):
                raise GraphError(f"layer {k} has shapes {w.shape}/{b.shape}, expected "
                                 f"{(dims[k], dims[k + 1])}/{(dims[k + 1],)}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise GraphError(f"layer {k} has non-finite parameters")

    @property
    def input_dim(self) -> int:
        return self.spec.input_dim

    @property
    def output_dim(self) -> int:
        return self.spec.output_dim

    def parameters(self) -> List[np.ndarray]:
        """Flat list [W0, b0, W1, b1, ...]; the arrays are the live parameters."""
        return [p for layer in self.layers for p in layer]

    def set_parameters(self, arrays: Sequence[np.ndarray]) -> None:
        arrays = list(arrays)
        self.layers = [(np.array(arrays[2 * k]), np.array(arrays[2 * k + 1])) for k in range(len(self.layers))]
        self._check_layers()

    def snapshot(self) -> List[np.ndarray]:
        return [p.copy() for p in self.parameters()]

    def parameter_nodes(self, graph: Graph) -> List[int]:
        return graph.bind_parameters(self, self.parameters())

    def build(self, graph: Graph, x: int) -> int:
        """
        Add the forward pass on batch node `x` (n, input_dim) to the graph.

        Returns:
            node of shape (n, output_dim)
        """
        shape = graph.shape(x)
        if len(shape) != 2 or shape[1] != self.input_dim:
            raise GraphError(f"network expects batches of width {self.input_dim}, got shape {shape}")
        params = self.parameter_nodes(graph)
        h = x
        last = len(self.layers) - 1
        for k in range(len(self.layers)):
            h = graph.affine(h, params[2 * k], params[2 * k + 1])
            if k < last:
                if self.spec.activation == "tanh":
                    h = graph.tanh(h)
                else:
                    h = graph.leaky_relu(h, self.spec.negative_slope)
        return h

    def apply(self, batch: PointCloud) -> PointCloud:
        if batch.dim != self.input_dim:
            raise GraphError(f"network expects dimension {self.input_dim}, got {batch.dim}")
        graph = Graph()
        out = graph.evaluate(self.build(graph, graph.constant(batch.points, name="batch")))
        return PointCloud(self.output_dim, out)

    def input_gradient(self, graph: Graph, x_leaf: int) -> int:
        """
        Per-point gradient of a scalar network w.r.t. its input, as a graph node.

        Points in a batch do not interact, so differentiating the batch sum
        yields every row's own gradient. The node can be differentiated again
        w.r.t. the network parameters.
        """
        if self.output_dim != 1:
            raise GraphError(f"input_gradient needs a scalar network, output_dim is {self.output_dim}")
        return graph.gradient_node(graph.sum(self.build(graph, x_leaf)), x_leaf)

    def gradient_at(self, points: np.ndarray) -> np.ndarray:
        """Numeric input gradients at the rows of `points`."""
        graph = Graph()
        x = graph.leaf(np.atleast_2d(points), name="points")
        return graph.evaluate(self.input_gradient(graph, x))


class QuadraticHead:
    """
    Fixed potential psi(y) = 1/2 (y - c)^T M (y - c) + k.

    Shares the graph interface of a scalar Mlp but has no trainable parameters.
    """

    def __init__(self, curvature: np.ndarray, center: Optional[np.ndarray] = None, constant: float = 0.0):
        self.curvature = np.atleast_2d(np.asarray(curvature, dtype=np.float64))
        dim = self.curvature.shape[0]
        if self.curvature.shape != (dim, dim):
            raise GraphError(f"curvature must be square, got {self.curvature.shape}")
        self.center = np.zeros(dim) if center is None else np.asarray(center, dtype=np.float64)
        self.constant = float(constant)

    @property
    def input_dim(self) -> int:
        return self.curvature.shape[0]

    @property
    def output_dim(self) -> int:
        return 1

    def parameters(self) -> List[np.ndarray]:
        return []

    def set_parameters(self, arrays: Sequence[np.ndarray]) -> None:
        if list(arrays):
            raise GraphError("QuadraticHead has no trainable parameters")

    def snapshot(self) -> List[np.ndarray]:
        return []

    def parameter_nodes(self, graph: Graph) -> List[int]:
        return []

    def build(self, graph: Graph, y: int) -> int:
        d = graph.add_bias(y, graph.constant(-self.center))
        quad = graph.mul(d, graph.matmul(d, graph.constant(self.curvature)))
        half = graph.constant(np.full((self.input_dim, 1), 0.5))
        return graph.add_bias(graph.matmul(quad, half), graph.constant(np.array([self.constant])))

    def apply(self, batch: PointCloud) -> PointCloud:
        graph = Graph()
        return PointCloud(1, graph.evaluate(self.build(graph, graph.constant(batch.points))))

    def input_gradient(self, graph: Graph, y_leaf: int) -> int:
        return graph.gradient_node(graph.sum(self.build(graph, y_leaf)), y_leaf)

    def gradient_at(self, points: np.ndarray) -> np.ndarray:
        graph = Graph()
        y = graph.leaf(np.atleast_2d(points))
        return graph.evaluate(self.input_gradient(graph, y))
