"""
Stochastic gradient descent-ascent for the transport map G and potential psi.

Each outer iteration runs k_psi Adam steps on the potential objective
(psi_loss plus the optional regularizer) followed by k_g Adam steps on the
map objective. Every inner step draws fresh batches.
"""

import logging
import time
from copy import deepcopy
from dataclasses import dataclass, field
from typing import Callable, List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, model_validator

from sampling.samplers import DatasetSampler
from transport.autodiff import Graph, GraphError
from transport.embedding import Embedding
from transport.losses import g_loss, gradient_optimality, gradient_penalty, psi_loss
from transport.optim import AdamState, OptimizerError, adam_step

logger = logging.getLogger(__name__)


class TrainConfig(BaseModel):
    """Hyperparameters of the training loop. Defaults are the 2-D toy settings."""
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    batch_size: PositiveInt = 400
    epochs: PositiveInt = 100
    samples_per_epoch: PositiveInt = 10_000
    total_iters: Optional[PositiveInt] = None
    k_g: PositiveInt = 16
    k_psi: PositiveInt = 1
    lr_g: float = Field(default=1e-3, gt=0.0)
    lr_psi: float = Field(default=1e-3, gt=0.0)
    beta1: float = Field(default=0.5, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.99, ge=0.0, lt=1.0)
    regularizer: Literal["none", "gradient_penalty", "gradient_optimality"] = "gradient_optimality"
    lambda_: float = Field(default=0.1, ge=0.0, alias="lambda")
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _no_weight_without_regularizer(self):
        if self.regularizer == "none":
            self.lambda_ = 0.0
        return self

    @property
    def iterations(self) -> int:
        """Outer iterations: total_iters, else one pass of samples_per_epoch per epoch."""
        if self.total_iters is not None:
            return self.total_iters
        return max(1, self.epochs * self.samples_per_epoch // self.batch_size)


@dataclass
class HistoryRecord:
    iter: int
    L_psi: float
    L_G: float
    reg_value: float
    wall_ms: float = 0.0


@dataclass
class TrainHistory:
    """One record per completed outer iteration, plus evaluation rows."""
    records: List[HistoryRecord] = field(default_factory=list)
    evaluations: List[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def losses_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{"iter": r.iter, "L_psi": r.L_psi, "L_G": r.L_G, "reg_value": r.reg_value}
                             for r in self.records], columns=["iter", "L_psi", "L_G", "reg_value"])

    def timing_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{"iter": r.iter, "wall_ms": r.wall_ms} for r in self.records],
                            columns=["iter", "wall_ms"])


class TrainingDivergedError(RuntimeError):
    """A loss or gradient went non-finite; networks and optimizer states are rolled back to the last good state."""

    def __init__(self, message: str, snapshot: Tuple[list, list], history: TrainHistory):
        super().__init__(message)
        self.snapshot = snapshot
        self.history = history


class OTMTrainer:
    """
    Alternating min-max training of a map G: R^H -> R^D and a potential psi on R^D.
    """

    def __init__(self, config: TrainConfig, mu_sampler: DatasetSampler, nu_sampler: DatasetSampler,
                 Q: Embedding, G, psi, log_period: int = 100):
        self.config = config
        self.mu_sampler = mu_sampler
        self.nu_sampler = nu_sampler
        self.Q = Q
        self.G = G
        self.psi = psi
        self.log_period = max(1, log_period)
        self.logger = logging.getLogger(__name__)
        self._check_dimensions()

        self.psi_state = AdamState.for_parameters(psi.parameters(), learning_rate=config.lr_psi,
                                                  beta1=config.beta1, beta2=config.beta2)
        self.g_state = AdamState.for_parameters(G.parameters(), learning_rate=config.lr_g,
                                                beta1=config.beta1, beta2=config.beta2)
        self.reg_rng = np.random.default_rng([config.seed, 2])
        self.history = TrainHistory()

    def _check_dimensions(self):
        h, d = self.Q.input_dim, self.Q.output_dim
        problems = []
        if self.mu_sampler.dim != h:
            problems.append(f"mu has dimension {self.mu_sampler.dim}, Q expects {h}")
        if self.nu_sampler.dim != d:
            problems.append(f"nu has dimension {self.nu_sampler.dim}, Q maps into {d}")
        if (self.G.input_dim, self.G.output_dim) != (h, d):
            problems.append(f"G maps {self.G.input_dim}->{self.G.output_dim}, expected {h}->{d}")
        if (self.psi.input_dim, self.psi.output_dim) != (d, 1):
            problems.append(f"psi maps {self.psi.input_dim}->{self.psi.output_dim}, expected {d}->1")
        if problems:
            raise GraphError("; ".join(problems))

    def psi_step(self) -> Tuple[float, float]:
        """
        One potential update on fresh X ~ mu, Y ~ nu.

        Returns:
            (psi loss, regularizer value) before the update
        """
        cfg = self.config
        X = self.mu_sampler.draw(cfg.batch_size)
        Y = self.nu_sampler.draw(cfg.batch_size)
        pushed = self.G.apply(X)
        graph = Graph()
        loss = psi_loss(graph, self.psi, self.G, X, Y, pushed=pushed)
        objective = loss
        reg = None
        if cfg.regularizer == "gradient_penalty":
            reg = gradient_penalty(graph, self.psi, pushed, Y, self.reg_rng)
        elif cfg.regularizer == "gradient_optimality":
            reg = gradient_optimality(graph, self.psi, self.G, X, pushed=pushed)
        if reg is not None:
            objective = graph.add(loss, graph.scale(reg, cfg.lambda_))

        grads = graph.gradient(objective, self.psi.parameter_nodes(graph))
        loss_value = float(graph.evaluate(loss))
        reg_value = float(graph.evaluate(reg)) if reg is not None else 0.0
        params, _ = adam_step(self.psi_state, self.psi.parameters(), grads)
        self.psi.set_parameters(params)
        return loss_value, reg_value

    def g_step(self) -> float:
        """One map update on a fresh X ~ mu; returns the map loss before the update."""
        X = self.mu_sampler.draw(self.config.batch_size)
        graph = Graph()
        loss = g_loss(graph, self.psi, self.G, self.Q, X)
        grads = graph.gradient(loss, self.G.parameter_nodes(graph))
        loss_value = float(graph.evaluate(loss))
        params, _ = adam_step(self.g_state, self.G.parameters(), grads)
        self.G.set_parameters(params)
        return loss_value

    def train(self, iterations: Optional[int] = None,
              on_iteration: Optional[Callable[[int, "OTMTrainer"], None]] = None) -> TrainHistory:
        """
        Run the outer loop.

        Args:
            iterations: outer iterations to run; defaults to the config budget
            on_iteration: called after every completed outer iteration

        Returns:
            The training history (also kept on the trainer)
        """
        cfg = self.config
        total = cfg.iterations if iterations is None else iterations
        self.logger.info(f"Training for {total} outer iterations (k_psi={cfg.k_psi}, k_g={cfg.k_g}, "
                         f"batch={cfg.batch_size}, regularizer={cfg.regularizer}, lambda={cfg.lambda_})")
        start = len(self.history) + 1
        for it in range(start, start + total):
            snapshot = (self.G.snapshot(), self.psi.snapshot())
            states = (deepcopy(self.g_state), deepcopy(self.psi_state))
            began = time.perf_counter()
            try:
                for _ in range(cfg.k_psi):
                    l_psi, reg_value = self.psi_step()
                for _ in range(cfg.k_g):
                    l_g = self.g_step()
            except (GraphError, OptimizerError) as e:
                self.G.set_parameters(snapshot[0])
                self.psi.set_parameters(snapshot[1])
                self.g_state, self.psi_state = states
                self.logger.error(f"Training diverged at iteration {it}: {e}")
                raise TrainingDivergedError(f"training diverged at iteration {it}: {e}",
                                            snapshot, self.history) from e
            wall_ms = (time.perf_counter() - began) * 1000.0
            self.history.records.append(HistoryRecord(it, l_psi, l_g, reg_value, wall_ms))
            if it % self.log_period == 0 or it == start + total - 1:
                self.logger.info(f"iter {it}: L_psi={l_psi:.6f} L_G={l_g:.6f} reg={reg_value:.6f}")
            if on_iteration is not None:
                on_iteration(it, self)
        return self.history


def train(config: TrainConfig, mu_sampler: DatasetSampler, nu_sampler: DatasetSampler,
          Q: Embedding, G, psi) -> Tuple[object, object, TrainHistory]:
    """Train G and psi in place for the configured budget."""
    history = OTMTrainer(config, mu_sampler, nu_sampler, Q, G, psi).train()
    return G, psi, history
