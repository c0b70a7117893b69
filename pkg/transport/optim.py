"""
Adam optimizer over lists of numpy parameter arrays.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)


class OptimizerError(ValueError):
    """Gradients that cannot be applied (non-finite or mis-shaped)."""


@dataclass
class AdamState:
    """Moment estimates and step counter for one group of parameters."""
    learning_rate: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.99
    epsilon: float = 1e-8
    t: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)
    # switched off only by the verification suite's fault injection
    bias_correction: bool = True

    @classmethod
    def for_parameters(cls, params: Sequence[np.ndarray], **kwargs) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **kwargs)


def adam_step(state: AdamState, params: Sequence[np.ndarray],
              grads: Sequence[np.ndarray]) -> Tuple[List[np.ndarray], AdamState]:
    """
    One Adam update.

    Args:
        state: optimizer state, updated in place
        params: current parameter arrays
        grads: gradients, one per parameter and shaped alike

    Returns:
        (new parameter arrays, state)
    """
    if len(params) != len(grads):
        raise OptimizerError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise OptimizerError(f"optimizer state tracks {len(state.m)} parameters, got {len(params)}")
    for k, (p, g) in enumerate(zip(params, grads)):
        if np.shape(g) != np.shape(p) or state.m[k].shape != np.shape(p):
            raise OptimizerError(f"gradient {k} has shape {np.shape(g)}, parameter has {np.shape(p)}")
        if not np.all(np.isfinite(g)):
            raise OptimizerError(f"gradient {k} contains non-finite values")

    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t if state.bias_correction else 1.0
    bc2 = 1.0 - state.beta2 ** state.t if state.bias_correction else 1.0

    updated = []
    for k, (p, g) in enumerate(zip(params, grads)):
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[k] / bc1
        v_hat = state.v[k] / bc2
        updated.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon))
    return updated, state
