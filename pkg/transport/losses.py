"""
Objectives of the min-max transport problem and the two potential regularizers.

Every loss takes the Graph to build into and returns a scalar node; the
caller decides which parameters to differentiate. The network that a loss
treats as fixed enters the graph only through constant leaves, so no
gradient can reach it.
"""

import logging
from typing import Optional

import numpy as np

from sampling.samplers import PointCloud
from transport.autodiff import Graph, GraphError
from transport.embedding import Embedding

logger = logging.getLogger(__name__)


def _check_batch(cloud: PointCloud, dim: int, what: str) -> None:
    if len(cloud) == 0:
        raise GraphError(f"{what} batch is empty")
    if cloud.dim != dim:
        raise GraphError(f"{what} batch has dimension {cloud.dim}, expected {dim}")


def psi_loss(graph: Graph, psi, G, X: PointCloud, Y: PointCloud,
             pushed: Optional[PointCloud] = None) -> int:
    """
    mean psi(Y) - mean psi(G(X)), differentiable w.r.t. psi only.

    Args:
        graph: graph to build into
        psi: scalar potential on R^D
        G: map R^H -> R^D, held fixed
        X: batch from mu (dimension H)
        Y: batch from nu (dimension D)
        pushed: G(X) if the caller already has it
    """
    _check_batch(X, G.input_dim, "X")
    _check_batch(Y, psi.input_dim, "Y")
    if G.output_dim != psi.input_dim:
        raise GraphError(f"G outputs dimension {G.output_dim}, psi expects {psi.input_dim}")
    if pushed is None:
        pushed = G.apply(X)
    pushed = graph.constant(pushed.points, name="G(X)")
    real = graph.constant(Y.points, name="Y")
    return graph.sub(graph.mean(psi.build(graph, real)), graph.mean(psi.build(graph, pushed)))


def g_loss(graph: Graph, psi, G, Q: Embedding, X: PointCloud) -> int:
    """
    mean over X of psi(G(x)) - <Q(x), G(x)>, differentiable w.r.t. G.

    psi parameters do appear in the graph; the caller differentiates w.r.t.
    G's parameter leaves only.
    """
    _check_batch(X, G.input_dim, "X")
    if Q.input_dim != G.input_dim or Q.output_dim != G.output_dim or psi.input_dim != G.output_dim:
        raise GraphError(f"inconsistent dimensions: Q {Q.input_dim}->{Q.output_dim}, "
                         f"G {G.input_dim}->{G.output_dim}, psi on {psi.input_dim}")
    n = len(X)
    pushed = G.build(graph, graph.constant(X.points, name="X"))
    embedded = graph.constant(Q.apply(X).points, name="Q(X)")
    potential = graph.mean(psi.build(graph, pushed))
    return graph.sub(potential, graph.scale(graph.dot(embedded, pushed), 1.0 / n))


def gradient_penalty(graph: Graph, psi, fake: PointCloud, real: PointCloud,
                     rng: np.random.Generator) -> int:
    """
    Mean of (||grad psi(y_hat)|| - 1)^2 at random interpolates of fake and real.

    One t ~ U[0, 1] is drawn per pair.
    """
    _check_batch(fake, psi.input_dim, "fake")
    _check_batch(real, psi.input_dim, "real")
    if len(fake) != len(real):
        raise GraphError(f"gradient penalty needs paired batches, got {len(fake)} and {len(real)}")
    t = rng.uniform(size=(len(real), 1))
    interpolates = graph.leaf(t * real.points + (1.0 - t) * fake.points, name="y_hat")
    grads = psi.input_gradient(graph, interpolates)
    norms = graph.sqrt(graph.sum_cols(graph.square(grads)))
    return graph.mean(graph.square(graph.shift(norms, -1.0)))


def gradient_optimality(graph: Graph, psi, G, X: PointCloud,
                        pushed: Optional[PointCloud] = None) -> int:
    """Norm of the batch-mean gradient of psi at G(X); `pushed` may carry a precomputed G(X)."""
    _check_batch(X, G.input_dim, "X")
    if G.output_dim != psi.input_dim:
        raise GraphError(f"G outputs dimension {G.output_dim}, psi expects {psi.input_dim}")
    if pushed is None:
        pushed = G.apply(X)
    pushed = graph.leaf(pushed.points, name="G(X)")
    grads = psi.input_gradient(graph, pushed)
    mean_grad = graph.scale(graph.sum_rows(grads), 1.0 / len(X))
    return graph.norm(mean_grad)


def saddle_objective(psi, G, Q: Embedding, X: PointCloud, Y: PointCloud) -> float:
    """
    Empirical value of the min-max objective:
    mean_X[<Q(x), G(x)> - psi(G(x))] + mean_Y[psi(y)].
    """
    pushed = G.apply(X)
    coupling = np.sum(Q.apply(X).points * pushed.points, axis=1)
    return float(np.mean(coupling - psi.apply(pushed).points[:, 0]) + np.mean(psi.apply(Y).points[:, 0]))
