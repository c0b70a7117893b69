"""
Exact optimal transport between two equal-size, equal-weight point clouds.

With uniform weights the optimal coupling is a permutation, so the problem
is a linear assignment on the matrix of 1/2 squared distances.
"""

import itertools
import logging
from typing import Literal, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from oracle.gaussian_oracle import OracleError
from sampling.samplers import PointCloud

logger = logging.getLogger(__name__)

EXHAUSTIVE_MAX = 8
ASSIGNMENT_MAX = 2048


def cost_matrix(X: PointCloud, Y: PointCloud) -> np.ndarray:
    return 0.5 * cdist(X.points, Y.points, metric="sqeuclidean")


def _mean_cost(costs: np.ndarray, perm: np.ndarray) -> float:
    n = len(perm)
    return float(np.sum(costs[np.arange(n), perm]) / n)


def _exhaustive(costs: np.ndarray) -> np.ndarray:
    n = costs.shape[0]
    rows = np.arange(n)
    best, best_cost = None, np.inf
    # permutations come in lexicographic order; only a strictly better cost replaces the incumbent
    for perm in itertools.permutations(range(n)):
        total = np.sum(costs[rows, perm])
        if total < best_cost:
            best, best_cost = perm, total
    return np.array(best, dtype=np.int64)


def discrete_ot(X: PointCloud, Y: PointCloud,
                method: Literal["auto", "exhaustive", "assignment"] = "auto") -> Tuple[np.ndarray, float]:
    """
    Optimal matching of X onto Y.

    Args:
        X, Y: clouds with the same number of points and the same dimension
        method: "exhaustive" searches all n! permutations (n <= 8), "assignment"
            solves the linear assignment problem (n <= 2048), "auto" picks the
            exhaustive search when it is allowed

    Returns:
        (perm, cost) where x_i is matched to y_perm[i] and
        cost = (1/n) sum_i 1/2 ||x_i - y_perm[i]||^2
    """
    if len(X) != len(Y):
        raise OracleError(f"discrete OT needs equal cardinalities, got {len(X)} and {len(Y)}")
    if X.dim != Y.dim:
        raise OracleError(f"dimension mismatch: {X.dim} vs {Y.dim}")
    n = len(X)
    if n == 0:
        return np.zeros(0, dtype=np.int64), 0.0
    if method == "auto":
        method = "exhaustive" if n <= EXHAUSTIVE_MAX else "assignment"
    if method == "exhaustive" and n > EXHAUSTIVE_MAX:
        raise OracleError(f"exhaustive search is limited to {EXHAUSTIVE_MAX} points, got {n}")
    if n > ASSIGNMENT_MAX:
        raise OracleError(f"discrete OT is limited to {ASSIGNMENT_MAX} points, got {n}")

    costs = cost_matrix(X, Y)
    if method == "exhaustive":
        perm = _exhaustive(costs)
    else:
        rows, perm = linear_sum_assignment(costs)
        perm = perm[np.argsort(rows)]
    return perm, _mean_cost(costs, perm)
