"""
Closed-form check of the duality-gap bound on the error of a recovered map.

For a strongly convex quadratic potential psi_hat and an affine map G_hat
between Gaussians, every term of the inequality chain

    2 W2^2(G_hat # mu, nu) <= ||G_hat - G*||^2_{L2(mu)} <= (2 / beta) (sqrt(eps1) + sqrt(eps2))^2

is available in closed form or as a mu-expectation. Integrals over nu are
rewritten as mu-expectations through G* (G* pushes mu onto nu), so all
Monte-Carlo terms share the same samples.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Optional, Union

import numpy as np

from oracle.gaussian_oracle import (
    AffineMap,
    Gaussian,
    OracleError,
    QuadraticPotential,
    conjugate,
    embedded_ot_map,
    frechet_distance,
    gaussian_w2,
)
from transport.embedding import Embedding

logger = logging.getLogger(__name__)


@dataclass
class BoundReport:
    epsilon_1: float
    epsilon_2: float
    beta: float
    map_error_sq: float
    twice_w2_sq: float
    frechet: float
    bound: float
    holds: bool

    def to_dict(self) -> dict:
        return asdict(self)


def affine_l2_distance_sq(a: AffineMap, b: AffineMap, mu: Gaussian) -> float:
    """E_{x ~ mu} ||a(x) - b(x)||^2 in closed form."""
    dm = a.matrix - b.matrix
    mean_gap = dm @ mu.mean + (a.offset - b.offset)
    return float(mean_gap @ mean_gap + np.trace(dm @ mu.covariance @ dm.T))


def verify_bound(mu: Gaussian, nu: Gaussian, psi_hat: QuadraticPotential, G_hat: AffineMap,
                 n_mc: int = 100_000, Q: Optional[Union[Embedding, np.ndarray]] = None,
                 seed: int = 0, tol: float = 1e-3) -> BoundReport:
    """
    Evaluate both duality gaps and the bound chain for (psi_hat, G_hat).

    Args:
        mu, nu: source and target Gaussians (mu with non-singular covariance)
        psi_hat: potential on R^D
        G_hat: affine map R^H -> R^D
        n_mc: samples from mu for the expectation terms
        Q: embedding (identity when omitted)
        seed: seed of the mu samples
        tol: tolerance for negative gaps and for the chain comparisons

    Raises:
        OracleError: a gap is negative beyond tolerance or no optimal map exists
    """
    if Q is None:
        q = np.eye(nu.dim, mu.dim)
        if mu.dim != nu.dim:
            raise OracleError("an embedding is required when mu and nu differ in dimension")
    elif isinstance(Q, Embedding):
        q = Q.as_matrix()
    else:
        q = np.atleast_2d(np.asarray(Q, dtype=np.float64))

    g_star = embedded_ot_map(mu, nu, q)
    x = mu.sample(n_mc, np.random.default_rng(seed)).points
    qx = x @ q.T
    nu_term = np.mean(psi_hat.value(g_star(x)))

    def functional(outputs: np.ndarray) -> float:
        return float(nu_term + np.mean(np.sum(qx * outputs, axis=1) - psi_hat.value(outputs)))

    g_prime, _ = conjugate(psi_hat, qx)
    best_response = functional(g_prime)
    eps1 = best_response - functional(G_hat(x))
    eps2 = best_response - float(np.mean(np.sum(qx * g_star(x), axis=1)))
    for name, value in (("epsilon_1", eps1), ("epsilon_2", eps2)):
        if value < -tol:
            raise OracleError(f"{name} = {value:.6g} is negative beyond tolerance {tol}")
    eps1, eps2 = max(eps1, 0.0), max(eps2, 0.0)

    beta = psi_hat.beta
    pushed = G_hat.pushforward(mu)
    map_error = affine_l2_distance_sq(G_hat, g_star, mu)
    twice_w2 = 2.0 * gaussian_w2(pushed, nu)
    fd = frechet_distance(pushed, nu)
    bound = (2.0 / beta) * (np.sqrt(eps1) + np.sqrt(eps2)) ** 2
    holds = bool(fd <= twice_w2 + tol and twice_w2 <= map_error + tol and map_error <= bound + tol)
    report = BoundReport(eps1, eps2, beta, map_error, twice_w2, fd, float(bound), holds)
    logger.debug(f"bound check: {report}")
    return report
