"""
Closed-form optimal transport between Gaussians under the cost 1/2 ||x - y||^2.
"""

import logging
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from sampling.samplers import PointCloud

logger = logging.getLogger(__name__)

EIGEN_CLAMP = 1e-10
SYMMETRY_TOL = 1e-12


class OracleError(ValueError):
    """Input outside the domain where an oracle's closed form applies."""


def _symmetric(matrix: np.ndarray, what: str) -> np.ndarray:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    if matrix.shape[0] != matrix.shape[1]:
        raise OracleError(f"{what} must be square, got shape {matrix.shape}")
    if np.max(np.abs(matrix - matrix.T), initial=0.0) > SYMMETRY_TOL * max(1.0, np.max(np.abs(matrix))):
        raise OracleError(f"{what} is not symmetric")
    return 0.5 * (matrix + matrix.T)


def sqrtm_psd(matrix: np.ndarray) -> np.ndarray:
    """Symmetric square root through an eigendecomposition, negative eigenvalues clamped to 0."""
    w, v = np.linalg.eigh(_symmetric(matrix, "matrix"))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def inv_sqrtm_pd(matrix: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(_symmetric(matrix, "matrix"))
    if w.min() <= EIGEN_CLAMP * max(1.0, w.max()):
        raise OracleError(f"matrix is singular (smallest eigenvalue {w.min():.3e})")
    return (v / np.sqrt(w)) @ v.T


@dataclass
class Gaussian:
    """N(mean, covariance)."""
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = _symmetric(self.covariance, "covariance")
        if cov.shape != (self.mean.size, self.mean.size):
            raise OracleError(f"covariance shape {cov.shape} does not match mean of size {self.mean.size}")
        w, v = np.linalg.eigh(cov)
        if w.min() < -EIGEN_CLAMP:
            raise OracleError(f"covariance is not positive semi-definite (eigenvalue {w.min():.3e})")
        if w.min() < 0.0:
            cov = (v * np.clip(w, 0.0, None)) @ v.T
        self.covariance = cov

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def from_samples(cls, cloud: PointCloud) -> "Gaussian":
        """Sample mean and unbiased sample covariance."""
        if len(cloud) < cloud.dim + 1:
            raise OracleError(f"need at least {cloud.dim + 1} points to fit a {cloud.dim}-d covariance, "
                              f"got {len(cloud)}")
        cov = np.atleast_2d(np.cov(cloud.points, rowvar=False, ddof=1))
        return cls(cloud.points.mean(axis=0), 0.5 * (cov + cov.T))

    def sample(self, n: int, rng: np.random.Generator) -> PointCloud:
        return PointCloud(self.dim, self.mean + rng.standard_normal((n, self.dim)) @ sqrtm_psd(self.covariance))


@dataclass
class AffineMap:
    """T(x) = A x + b."""
    matrix: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=np.float64))
        self.offset = np.atleast_1d(np.asarray(self.offset, dtype=np.float64))
        if self.offset.shape != (self.matrix.shape[0],):
            raise OracleError(f"offset of shape {self.offset.shape} does not match matrix {self.matrix.shape}")

    @property
    def input_dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def output_dim(self) -> int:
        return self.matrix.shape[0]

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.matrix.T + self.offset

    def apply(self, cloud: PointCloud) -> PointCloud:
        if cloud.dim != self.input_dim:
            raise OracleError(f"map expects dimension {self.input_dim}, got {cloud.dim}")
        return PointCloud(self.output_dim, self(cloud.points))

    def pushforward(self, g: Gaussian) -> Gaussian:
        return Gaussian(self.matrix @ g.mean + self.offset, self.matrix @ g.covariance @ self.matrix.T)


@dataclass
class QuadraticPotential:
    """psi(y) = 1/2 (y - c)^T M (y - c) + k with M symmetric positive definite."""
    curvature: np.ndarray
    center: np.ndarray
    constant: float = 0.0

    def __post_init__(self):
        self.curvature = _symmetric(self.curvature, "curvature")
        self.center = np.atleast_1d(np.asarray(self.center, dtype=np.float64))
        if self.center.shape != (self.curvature.shape[0],):
            raise OracleError("center does not match curvature")
        if self.beta <= 0.0:
            raise OracleError(f"curvature must be positive definite (smallest eigenvalue {self.beta:.3e})")

    @property
    def beta(self) -> float:
        """Strong-convexity modulus: smallest eigenvalue of M."""
        return float(np.linalg.eigvalsh(self.curvature).min())

    def value(self, points: np.ndarray) -> np.ndarray:
        d = np.atleast_2d(points) - self.center
        return 0.5 * np.sum((d @ self.curvature) * d, axis=1) + self.constant

    def gradient(self, points: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(points) - self.center) @ self.curvature


def _check_pair(mu: Gaussian, nu: Gaussian):
    if mu.dim != nu.dim:
        raise OracleError(f"dimension mismatch: {mu.dim} vs {nu.dim}")


def _cross_root(a: Gaussian, b: Gaussian) -> Tuple[np.ndarray, np.ndarray]:
    """(Sa^(1/2), (Sa^(1/2) Sb Sa^(1/2))^(1/2))"""
    root_a = sqrtm_psd(a.covariance)
    middle = root_a @ b.covariance @ root_a
    return root_a, sqrtm_psd(0.5 * (middle + middle.T))


def gaussian_ot_map(mu: Gaussian, nu: Gaussian) -> AffineMap:
    """
    Brenier map between two Gaussians of equal dimension.

    Raises:
        OracleError: when the source covariance is singular
    """
    _check_pair(mu, nu)
    inv_root = inv_sqrtm_pd(mu.covariance)
    _, cross = _cross_root(mu, nu)
    a = inv_root @ cross @ inv_root
    a = 0.5 * (a + a.T)
    return AffineMap(a, nu.mean - a @ mu.mean)


def _bures_trace(a: Gaussian, b: Gaussian) -> float:
    _, cross = _cross_root(a, b)
    return float(np.trace(a.covariance) + np.trace(b.covariance) - 2.0 * np.trace(cross))


def gaussian_w2(mu: Gaussian, nu: Gaussian) -> float:
    """Transport cost 1/2 (||m_mu - m_nu||^2 + Bures term)."""
    _check_pair(mu, nu)
    shift = float(np.sum((mu.mean - nu.mean) ** 2))
    return max(0.0, 0.5 * (shift + _bures_trace(mu, nu)))


def frechet_distance(a: Gaussian, b: Gaussian) -> float:
    """||m_a - m_b||^2 + tr(Sa + Sb - 2 (Sa^(1/2) Sb Sa^(1/2))^(1/2))."""
    _check_pair(a, b)
    return max(0.0, float(np.sum((a.mean - b.mean) ** 2)) + _bures_trace(a, b))


def conjugate(psi: QuadraticPotential, x: np.ndarray) -> Tuple[np.ndarray, Union[float, np.ndarray]]:
    """
    Convex conjugate sup_y <x, y> - psi(y) of a quadratic potential.

    Args:
        psi: the potential
        x: a point (D,) or a batch (n, D)

    Returns:
        (maximizer y* = c + M^-1 x, conjugate value), batched like x
    """
    x = np.asarray(x, dtype=np.float64)
    batch = np.atleast_2d(x)
    y_star = psi.center + np.linalg.solve(psi.curvature, batch.T).T
    values = np.sum(batch * y_star, axis=1) - psi.value(y_star)
    if x.ndim == 1:
        return y_star[0], float(values[0])
    return y_star, values


def embedded_ot_map(mu: Gaussian, nu: Gaussian, q_matrix: np.ndarray) -> AffineMap:
    """
    Optimal map G*: R^H -> R^D for the cost 1/2 ||Q x - y||^2 between Gaussians.

    The H-dimensional problem is solved between mu and Q^T # nu, then lifted
    back to R^D through the conditional mean of y given Q^T y. The lift is a
    deterministic map only when that conditional is degenerate.

    Raises:
        OracleError: when no deterministic optimal map exists
    """
    q = np.atleast_2d(np.asarray(q_matrix, dtype=np.float64))
    if q.shape != (nu.dim, mu.dim):
        raise OracleError(f"embedding matrix must be {nu.dim}x{mu.dim}, got {q.shape}")
    projected = Gaussian(q.T @ nu.mean, q.T @ nu.covariance @ q)
    inner = gaussian_ot_map(mu, projected)
    gain = nu.covariance @ q @ np.linalg.pinv(projected.covariance)
    residual = nu.covariance - gain @ q.T @ nu.covariance
    if np.max(np.abs(residual)) > 1e-9 * max(1.0, np.max(np.abs(nu.covariance))):
        raise OracleError("target is not a deterministic function of its projection; "
                          "no deterministic optimal map exists")
    return AffineMap(gain @ inner.matrix, nu.mean + gain @ (inner.offset - projected.mean))
