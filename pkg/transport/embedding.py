"""
Embeddings Q: R^H -> R^D used by the Q-embedded quadratic cost 1/2 ||Q(x) - y||^2.
"""

from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, PositiveInt, model_validator

from sampling.samplers import PointCloud


class Embedding(BaseModel):
    """A linear, pointwise embedding of R^H into R^D."""
    model_config = ConfigDict(extra="forbid")

    kind: Literal["identity", "zero_pad", "linear_interp_upsample", "explicit_matrix"] = "identity"
    input_dim: PositiveInt
    output_dim: PositiveInt
    matrix: Optional[List[List[float]]] = None

    @model_validator(mode="after")
    def _check_dims(self):
        h, d = self.input_dim, self.output_dim
        if self.kind == "identity" and h != d:
            raise ValueError(f"identity embedding needs equal dimensions, got H={h}, D={d}")
        if self.kind in ("zero_pad", "linear_interp_upsample") and h > d:
            raise ValueError(f"{self.kind} needs H <= D, got H={h}, D={d}")
        if self.kind == "explicit_matrix":
            if self.matrix is None:
                raise ValueError("explicit_matrix embedding needs a matrix")
            shape = np.asarray(self.matrix, dtype=np.float64).shape
            if shape != (d, h):
                raise ValueError(f"embedding matrix must be {d}x{h}, got {shape}")
        elif self.matrix is not None:
            raise ValueError(f"{self.kind} embedding does not take a matrix")
        return self

    def as_matrix(self) -> np.ndarray:
        """The D x H matrix of the embedding."""
        h, d = self.input_dim, self.output_dim
        if self.kind == "identity":
            return np.eye(d)
        if self.kind == "zero_pad":
            return np.eye(d, h)
        if self.kind == "linear_interp_upsample":
            source = np.linspace(0.0, 1.0, h)
            target = np.linspace(0.0, 1.0, d)
            return np.stack([np.interp(target, source, unit) for unit in np.eye(h)], axis=1)
        return np.asarray(self.matrix, dtype=np.float64)

    def apply(self, batch: PointCloud) -> PointCloud:
        if batch.dim != self.input_dim:
            raise ValueError(f"embedding expects dimension {self.input_dim}, got {batch.dim}")
        if self.kind == "identity":
            return batch
        if self.kind == "zero_pad":
            padded = np.zeros((len(batch), self.output_dim))
            padded[:, :self.input_dim] = batch.points
            return PointCloud(self.output_dim, padded)
        if self.kind == "linear_interp_upsample":
            source = np.linspace(0.0, 1.0, self.input_dim)
            target = np.linspace(0.0, 1.0, self.output_dim)
            rows = [np.interp(target, source, row) for row in batch.points]
            return PointCloud(self.output_dim, np.array(rows).reshape(len(batch), self.output_dim))
        return PointCloud(self.output_dim, batch.points @ self.as_matrix().T)


def embed(q: Embedding, batch: PointCloud) -> PointCloud:
    return q.apply(batch)
