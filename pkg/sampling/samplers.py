"""
Seeded synthetic distributions.

Every dataset is an infinite, deterministic stream of points. The stream is
cut into fixed blocks of `_BLOCK` points and block k is generated from its own
generator seeded with (seed, k), so any window of the stream can be produced
without replaying what came before it.
"""

import logging
from dataclasses import dataclass
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

logger = logging.getLogger(__name__)

_BLOCK = 1024
# extra seed word separating degradation noise from the base stream
_NOISE_TAG = 7919

DatasetKind = Literal["gaussian", "gaussian_mixture_ring", "two_moons", "circles",
                      "s_curve", "swiss_roll", "degraded_pair"]
TOY_KINDS = ("gaussian_mixture_ring", "two_moons", "circles", "s_curve", "swiss_roll")


class SamplerError(ValueError):
    """Invalid sampling request."""


@dataclass
class PointCloud:
    """A batch of n points in R^dim, stored row-wise."""
    dim: int
    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim == 1 and self.points.size == 0:
            self.points = self.points.reshape(0, self.dim)
        if self.dim < 1:
            raise SamplerError(f"point dimension must be positive, got {self.dim}")
        if self.points.ndim != 2 or self.points.shape[1] != self.dim:
            raise SamplerError(f"points of shape {self.points.shape} do not match dim {self.dim}")
        if not np.all(np.isfinite(self.points)):
            raise SamplerError("point cloud contains non-finite values")

    @classmethod
    def of(cls, points) -> "PointCloud":
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return cls(dim=points.shape[1], points=points)

    def __len__(self) -> int:
        return self.points.shape[0]

    def split(self, n: int) -> Tuple["PointCloud", "PointCloud"]:
        return PointCloud(self.dim, self.points[:n]), PointCloud(self.dim, self.points[n:])


class Degradation(BaseModel):
    """Corruption applied to a clean base sample."""
    model_config = ConfigDict(extra="forbid")

    kind: Literal["additive_gaussian", "coordinate_mask"] = "additive_gaussian"
    sigma: float = Field(default=0.3, ge=0.0)
    # coordinates zeroed by coordinate_mask
    masked: List[int] = Field(default_factory=list)


class DatasetSpec(BaseModel):
    """Kind plus kind-specific parameters of a synthetic distribution."""
    model_config = ConfigDict(extra="forbid")

    kind: DatasetKind
    seed: int = Field(default=0, ge=0)
    # gaussian
    mean: Optional[List[float]] = None
    cov: Optional[List[List[float]]] = None
    # gaussian_mixture_ring
    components: int = Field(default=8, ge=1)
    radius: float = Field(default=4.0, gt=0.0)
    component_std: float = Field(default=0.4, ge=0.0)
    # two_moons, circles, s_curve, swiss_roll
    noise: Optional[float] = Field(default=None, ge=0.0)
    factor: float = Field(default=0.5, gt=0.0, lt=1.0)
    scale: float = Field(default=1.0, gt=0.0)
    # degraded_pair
    base: Optional["DatasetSpec"] = None
    degradation: Optional[Degradation] = None

    @model_validator(mode="after")
    def _check_kind(self):
        if self.kind == "gaussian":
            mean = self.mean if self.mean is not None else [0.0, 0.0]
            cov = np.asarray(self.cov if self.cov is not None else np.eye(len(mean)), dtype=np.float64)
            if len(mean) == 0:
                raise ValueError("gaussian mean must be non-empty")
            if cov.shape != (len(mean), len(mean)):
                raise ValueError(f"gaussian cov must be {len(mean)}x{len(mean)}, got {cov.shape}")
            if not np.allclose(cov, cov.T, atol=1e-12):
                raise ValueError("gaussian cov must be symmetric")
            if np.linalg.eigvalsh(cov).min() < -1e-10:
                raise ValueError("gaussian cov must be positive semi-definite")
        if self.kind == "degraded_pair":
            if self.base is None:
                raise ValueError("degraded_pair needs a base dataset")
            if self.base.kind == "degraded_pair":
                raise ValueError("degraded_pair cannot wrap another degraded_pair")
            degradation = self.degradation or Degradation()
            for c in degradation.masked:
                if not 0 <= c < self.base.dim:
                    raise ValueError(f"masked coordinate {c} outside base dimension {self.base.dim}")
        return self

    @property
    def dim(self) -> int:
        if self.kind == "gaussian":
            return len(self.mean) if self.mean is not None else 2
        if self.kind == "degraded_pair":
            return self.base.dim
        return 2

    def gaussian_parameters(self) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """(mean, cov) for gaussian datasets, None otherwise."""
        if self.kind != "gaussian":
            return None
        mean = np.asarray(self.mean if self.mean is not None else [0.0, 0.0], dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64) if self.cov is not None else np.eye(mean.size)
        return mean, cov

    def noise_level(self) -> float:
        defaults = {"two_moons": 0.1, "circles": 0.05, "s_curve": 0.05, "swiss_roll": 0.05}
        return self.noise if self.noise is not None else defaults.get(self.kind, 0.0)


DatasetSpec.model_rebuild()


# ----------------------------------------------------------------------
# block generators: (spec, rng, count) -> (count, dim) array

def _gaussian_block(spec, rng, count):
    mean, cov = spec.gaussian_parameters()
    w, v = np.linalg.eigh(cov)
    root = v * np.sqrt(np.clip(w, 0.0, None))
    return mean + rng.standard_normal((count, mean.size)) @ root.T


def _ring_block(spec, rng, count):
    labels = rng.integers(spec.components, size=count)
    angles = 2.0 * np.pi * labels / spec.components
    centers = spec.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return centers + spec.component_std * rng.standard_normal((count, 2))


def _moons_block(spec, rng, count):
    upper = rng.integers(2, size=count) == 0
    t = rng.uniform(0.0, np.pi, size=count)
    x = np.where(upper, np.cos(t), 1.0 - np.cos(t))
    y = np.where(upper, np.sin(t), 0.5 - np.sin(t))
    return np.stack([x, y], axis=1) + spec.noise_level() * rng.standard_normal((count, 2))


def _circles_block(spec, rng, count):
    inner = rng.integers(2, size=count) == 1
    t = rng.uniform(0.0, 2.0 * np.pi, size=count)
    r = np.where(inner, spec.factor, 1.0)
    points = np.stack([r * np.cos(t), r * np.sin(t)], axis=1)
    return points + spec.noise_level() * rng.standard_normal((count, 2))


def _s_curve_block(spec, rng, count):
    t = 3.0 * np.pi * (rng.uniform(size=count) - 0.5)
    # the extruded coordinate is dropped; keep the curved (x, z) plane
    points = np.stack([np.sin(t), np.sign(t) * (np.cos(t) - 1.0)], axis=1)
    points = points + spec.noise_level() * rng.standard_normal((count, 2))
    return spec.scale * points


def _swiss_roll_block(spec, rng, count):
    t = 1.5 * np.pi * (1.0 + 2.0 * rng.uniform(size=count))
    points = np.stack([t * np.cos(t), t * np.sin(t)], axis=1)
    points = points + spec.noise_level() * rng.standard_normal((count, 2))
    return spec.scale * points


_GENERATORS = {
    "gaussian": _gaussian_block,
    "gaussian_mixture_ring": _ring_block,
    "two_moons": _moons_block,
    "circles": _circles_block,
    "s_curve": _s_curve_block,
    "swiss_roll": _swiss_roll_block,
}


def _block(spec: DatasetSpec, k: int) -> np.ndarray:
    if spec.kind == "degraded_pair":
        clean = _block(spec.base, k)
        degradation = spec.degradation or Degradation()
        if degradation.kind == "additive_gaussian":
            if degradation.sigma == 0.0:
                return clean
            rng = np.random.default_rng([spec.seed, k, _NOISE_TAG])
            return clean + degradation.sigma * rng.standard_normal(clean.shape)
        masked = clean.copy()
        masked[:, degradation.masked] = 0.0
        return masked
    rng = np.random.default_rng([spec.seed, k])
    return _GENERATORS[spec.kind](spec, rng, _BLOCK)


def sample(spec: DatasetSpec, n: int, position: int = 0) -> PointCloud:
    """
    Points [position, position + n) of the dataset's stream.

    Args:
        spec: dataset definition
        n: number of points (may be 0)
        position: stream offset of the first point

    Returns:
        PointCloud of n points in R^spec.dim
    """
    if n < 0:
        raise SamplerError(f"cannot sample a negative number of points ({n})")
    if position < 0:
        raise SamplerError(f"stream position must be non-negative, got {position}")
    if n == 0:
        return PointCloud(spec.dim, np.zeros((0, spec.dim)))
    first, last = position // _BLOCK, (position + n - 1) // _BLOCK
    chunk = np.concatenate([_block(spec, k) for k in range(first, last + 1)], axis=0)
    start = position - first * _BLOCK
    return PointCloud(spec.dim, chunk[start:start + n])


def total_variance(spec: DatasetSpec, n_mc: int = 10_000, position: int = 0) -> float:
    """
    Trace of the covariance of the distribution.

    Analytic for gaussian and mixture-ring datasets, Monte-Carlo otherwise.
    """
    if spec.kind == "gaussian":
        _, cov = spec.gaussian_parameters()
        return float(np.trace(cov))
    if spec.kind == "gaussian_mixture_ring" and spec.components > 1:
        # centers are evenly spaced on the circle, so their mean is the origin
        return float(spec.radius ** 2 + 2 * spec.component_std ** 2)
    points = sample(spec, n_mc, position).points
    return float(np.trace(np.atleast_2d(np.cov(points, rowvar=False, bias=True))))


class DatasetSampler:
    """A dataset stream with a cursor; each draw advances the cursor."""

    def __init__(self, spec: DatasetSpec, position: int = 0):
        self.spec = spec
        self.position = position
        self.logger = logging.getLogger(__name__)

    @property
    def dim(self) -> int:
        return self.spec.dim

    def draw(self, n: int) -> PointCloud:
        cloud = sample(self.spec, n, self.position)
        self.position += n
        return cloud

    def clone(self, position: Optional[int] = None) -> "DatasetSampler":
        return DatasetSampler(self.spec, self.position if position is None else position)
