"""Adaptive-moment optimizer with decoupled weight decay."""

from dataclasses import dataclass, field
from typing import Collection, Dict, Mapping, Optional

import click
import numpy as np

from .model import ModelWeights

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8

# Weight decay skips biases and the norm gain.
DECAYED = ("embed", "w_q", "w_k", "w_v", "mlp_in", "mlp_out", "readout")


@dataclass
class AdamState:
    """First and second moment estimates per parameter, plus the step count."""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    rejected: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls(
            m={name: np.zeros_like(value) for name, value in params.items()},
            v={name: np.zeros_like(value) for name, value in params.items()},
        )


def grads_finite(grads: Mapping[str, np.ndarray]) -> bool:
    return all(np.isfinite(g).all() for g in grads.values())


def adam_update(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    lr: float,
    weight_decay: float,
    state: AdamState,
    decayed: Optional[Collection[str]] = None,
) -> Dict[str, np.ndarray]:
    """Bias-corrected moment update of a dict of arrays.

    Decay is applied first as ``p *= (1 - lr * weight_decay)`` to the names in
    ``decayed`` (every name when omitted). A step whose gradients contain NaN
    or Inf is rejected: parameters and moments stay as they were and a
    warning is echoed.

    Args:
        params: Current parameters
        grads: Gradient per name; missing names count as zero
        lr: Learning rate
        weight_decay: Decoupled decay coefficient
        state: Moment state, advanced in place
        decayed: Names subject to weight decay

    Returns:
        New parameter dict (inputs are not modified)
    """
    if not state.m:
        fresh = AdamState.zeros_like(params)
        state.m, state.v = fresh.m, fresh.v
    if not grads_finite(grads):
        state.rejected += 1
        click.echo(
            f"Warning: non-finite gradient at step {state.t + 1}; update skipped", err=True
        )
        return {name: value.copy() for name, value in params.items()}

    decayed = params.keys() if decayed is None else decayed
    state.t += 1
    correction1 = 1.0 - BETA1 ** state.t
    correction2 = 1.0 - BETA2 ** state.t
    updated = {}
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(value)
        param = value * (1.0 - lr * weight_decay) if name in decayed else value.copy()
        state.m[name] = BETA1 * state.m[name] + (1.0 - BETA1) * grad
        state.v[name] = BETA2 * state.v[name] + (1.0 - BETA2) * grad * grad
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        updated[name] = param - lr * m_hat / (np.sqrt(v_hat) + EPSILON)
    return updated


def optimizer_step(
    weights: ModelWeights,
    grads: Mapping[str, np.ndarray],
    lr: float,
    weight_decay: float,
    state: Optional[AdamState] = None,
) -> ModelWeights:
    """Update model weights; biases and the norm gain are not decayed."""
    if state is None:
        state = AdamState()
    updated = adam_update(weights.arrays(), grads, lr, weight_decay, state, DECAYED)
    return ModelWeights(**updated)
