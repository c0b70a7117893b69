"""
Run configuration: YAML on disk, validated with pydantic.
"""

import logging
import os
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, model_validator

from oracle.gaussian_oracle import AffineMap, Gaussian, OracleError, embedded_ot_map
from sampling.samplers import DatasetSpec, total_variance
from transport.embedding import Embedding
from transport.nets import MlpSpec
from transport.trainer import TrainConfig

logger = logging.getLogger(__name__)

# eval draws from this stream offset so it never overlaps training batches
EVAL_STREAM_OFFSET = 1_000_000_000


class ReferenceMap(BaseModel):
    """Explicit affine reference map T*(x) = matrix x + offset."""
    model_config = ConfigDict(extra="forbid")

    matrix: List[List[float]]
    offset: List[float]


class EvalSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sample_count: PositiveInt = 10_000
    # evaluate every eval_period outer iterations; 0 evaluates only after training
    eval_period: int = Field(default=0, ge=0)
    w2_points: PositiveInt = 400
    # pass criterion: final pushforward W2 below this fraction of the input-vs-target W2
    w2_threshold: Optional[float] = Field(default=None, gt=0.0)
    seed: int = Field(default=12345, ge=0)
    stream_offset: int = Field(default=EVAL_STREAM_OFFSET, ge=0)
    log_period: PositiveInt = 100
    plot_points: PositiveInt = 1000
    reference_map: Optional[ReferenceMap] = None


class RunConfig(BaseModel):
    """Everything needed to reproduce one training run."""
    model_config = ConfigDict(extra="forbid")

    name: str
    mu: DatasetSpec
    nu: DatasetSpec
    embedding: Optional[Embedding] = None
    generator: MlpSpec
    potential: MlpSpec
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalSettings = Field(default_factory=EvalSettings)
    output_dir: str = "outputs"

    @model_validator(mode="after")
    def _check_dimensions(self):
        h, d = self.mu.dim, self.nu.dim
        if self.embedding is None:
            if h != d:
                raise ValueError(f"mu has dimension {h} and nu {d}: an embedding is required")
            self.embedding = Embedding(kind="identity", input_dim=h, output_dim=d)
        if (self.embedding.input_dim, self.embedding.output_dim) != (h, d):
            raise ValueError(f"embedding maps {self.embedding.input_dim}->{self.embedding.output_dim}, "
                             f"data needs {h}->{d}")
        if (self.generator.input_dim, self.generator.output_dim) != (h, d):
            raise ValueError(f"generator must map {h}->{d}")
        if (self.potential.input_dim, self.potential.output_dim) != (d, 1):
            raise ValueError(f"potential must map {d}->1")
        ref = self.eval.reference_map
        if ref is not None and np.asarray(ref.matrix).shape != (d, h):
            raise ValueError(f"reference map matrix must be {d}x{h}")
        return self

    def with_seed(self, seed: int) -> "RunConfig":
        """
        Copy with every seed derived from `seed`; used by seed sweeps.

        The output directory gets a per-seed suffix.
        """
        words = np.random.SeedSequence(seed).generate_state(4)
        update = {
            "mu": _reseed(self.mu, int(words[0])),
            "nu": _reseed(self.nu, int(words[1])),
            "generator": self.generator.model_copy(update={"seed": int(words[2])}),
            "potential": self.potential.model_copy(update={"seed": int(words[3])}),
            "train": self.train.model_copy(update={"seed": seed}),
            "output_dir": str(Path(self.output_dir) / f"seed_{seed}"),
        }
        return self.model_copy(update=update)


def _reseed(spec: DatasetSpec, seed: int) -> DatasetSpec:
    update = {"seed": seed}
    if spec.base is not None:
        update["base"] = spec.base.model_copy(update={"seed": seed + 1})
    return spec.model_copy(update=update)


def load_run_config(path: str) -> RunConfig:
    """Read and validate a YAML run configuration."""
    with open(path, "r", encoding="utf-8") as f:
        raw = yaml.safe_load(f)
    if not isinstance(raw, dict):
        raise ValueError(f"{path} does not contain a mapping")
    return RunConfig.model_validate(raw)


def dump_resolved(config: RunConfig) -> str:
    """YAML of the validated config, defaults filled in; loading it gives back the same config."""
    data = config.model_dump(mode="json", by_alias=True, exclude_none=True)
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=None)


def resolve_output_dir(config: RunConfig) -> Path:
    """Output directory, re-rooted under OTM_OUTPUT_ROOT when that is set."""
    load_dotenv()
    root = os.getenv("OTM_OUTPUT_ROOT")
    out = Path(config.output_dir)
    if root:
        out = Path(root) / (out.relative_to(out.anchor) if out.is_absolute() else out)
    return out


def reference_map(config: RunConfig) -> Tuple[Optional[AffineMap], float]:
    """
    Reference map T* (None when no closed form is available) and Var(nu).
    """
    nu_variance = total_variance(config.nu, position=config.eval.stream_offset)
    ref = config.eval.reference_map
    if ref is not None:
        return AffineMap(np.asarray(ref.matrix), np.asarray(ref.offset)), nu_variance
    mu_params, nu_params = config.mu.gaussian_parameters(), config.nu.gaussian_parameters()
    if mu_params is None or nu_params is None:
        return None, nu_variance
    try:
        t_star = embedded_ot_map(Gaussian(*mu_params), Gaussian(*nu_params), config.embedding.as_matrix())
    except OracleError as e:
        logger.warning(f"No analytic reference map for this pair: {e}")
        t_star = None
    return t_star, nu_variance
