"""
Quality metrics for fitted transport maps.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Optional, Union

import numpy as np

from oracle.discrete_oracle import discrete_ot
from oracle.gaussian_oracle import Gaussian, OracleError, frechet_distance
from sampling.samplers import PointCloud
from transport.embedding import Embedding

logger = logging.getLogger(__name__)

EVAL_COLUMNS = ["iteration", "l2_uvp_percent", "empirical_transport_cost",
                "empirical_w2_pushforward_vs_target", "frechet_gaussian", "sample_count", "seed"]


@dataclass
class EvalReport:
    """One evaluation of a map; l2_uvp_percent is None when no reference map exists."""
    l2_uvp_percent: Optional[float]
    empirical_transport_cost: float
    empirical_w2_pushforward_vs_target: float
    frechet_gaussian: float
    sample_count: int
    seed: int
    iteration: int = 0

    def to_row(self) -> dict:
        row = asdict(self)
        return {column: row[column] for column in EVAL_COLUMNS}


def l2_uvp(G_hat, T_star, mu_samples: PointCloud, nu_variance: float) -> float:
    """
    L2 unexplained variance percentage: 100 * E||G_hat(x) - T*(x)||^2 / Var(nu).

    Args:
        G_hat: fitted map (anything with apply(PointCloud) -> PointCloud)
        T_star: reference map, same interface
        mu_samples: evaluation points
        nu_variance: total variance (covariance trace) of the target
    """
    if nu_variance <= 0:
        raise ValueError(f"target variance must be positive, got {nu_variance}")
    gap = G_hat.apply(mu_samples).points - T_star.apply(mu_samples).points
    return float(100.0 * np.mean(np.sum(gap ** 2, axis=1)) / nu_variance)


def _as_gaussian(value: Union[PointCloud, Gaussian]) -> Gaussian:
    return value if isinstance(value, Gaussian) else Gaussian.from_samples(value)


def frechet_gaussian(a: Union[PointCloud, Gaussian], b: Union[PointCloud, Gaussian]) -> float:
    """Frechet distance between Gaussians fitted to (or given as) a and b."""
    return frechet_distance(_as_gaussian(a), _as_gaussian(b))


def empirical_transport_cost(G, Q: Embedding, X: PointCloud) -> float:
    """(1/n) sum 1/2 ||Q(x) - G(x)||^2."""
    pushed = G.apply(X)
    embedded = Q.apply(X)
    if pushed.dim != embedded.dim:
        raise ValueError(f"map outputs dimension {pushed.dim}, embedding {embedded.dim}")
    return float(np.mean(0.5 * np.sum((embedded.points - pushed.points) ** 2, axis=1)))


def empirical_w2(X: PointCloud, Y: PointCloud) -> float:
    """Optimal matching cost between two equal-size clouds."""
    return discrete_ot(X, Y)[1]


def evaluate_map(G, Q: Embedding, mu_samples: PointCloud, nu_samples: PointCloud, seed: int,
                 T_star=None, nu_variance: Optional[float] = None, w2_points: int = 400,
                 iteration: int = 0) -> EvalReport:
    """
    Full report for a map on fixed evaluation samples.

    The matching-based W2 uses the first `w2_points` points of each cloud;
    every other metric uses all of them.
    """
    pushed = G.apply(mu_samples)
    k = min(w2_points, len(pushed), len(nu_samples))
    uvp = None
    if T_star is not None and nu_variance is not None:
        uvp = l2_uvp(G, T_star, mu_samples, nu_variance)
    try:
        fd = frechet_gaussian(pushed, nu_samples)
    except OracleError as e:
        logger.warning(f"Frechet distance unavailable: {e}")
        fd = float("nan")
    return EvalReport(
        l2_uvp_percent=uvp,
        empirical_transport_cost=empirical_transport_cost(G, Q, mu_samples),
        empirical_w2_pushforward_vs_target=empirical_w2(pushed.split(k)[0], nu_samples.split(k)[0]),
        frechet_gaussian=fd,
        sample_count=len(mu_samples),
        seed=seed,
        iteration=iteration,
    )
