"""Latent Hamiltonian dynamics over an attention free-energy landscape.

The simulator tracks one latent vector ``z`` (the query of the last token)
and its velocity ``v``. Vectors are columns here: ``W_Q z`` is the query and
``W_K x_i`` the key of context row ``x_i``. The looped model multiplies rows
(``h W_Q``), so trained weights go through ``column_form`` first.

Update, velocity first::

    v' = mu v + alpha (F(z) - z) - beta_k grad E(z)
    z' = z + v'
"""

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DomainError, ShapeError
from .model import ModelWeights, embed_sequence

PHASES = ("gaseous", "liquid", "solid")
HOT_FRACTION = 0.5
COLD_FRACTION = 0.05


@dataclass
class HamiltonianState:
    z: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64).reshape(-1)
        self.v = np.asarray(self.v, dtype=np.float64).reshape(-1)
        if self.z.shape != self.v.shape:
            raise ShapeError("hamiltonian state", self.z.shape, self.v.shape)
        if not (np.isfinite(self.z).all() and np.isfinite(self.v).all()):
            raise DomainError("hamiltonian state has non-finite entries")

    @property
    def kinetic(self) -> float:
        return 0.5 * float(self.v @ self.v)


@dataclass(frozen=True)
class DynamicsParams:
    """Integrator coefficients.

    ``beta_schedule`` is either one constant or a per-step sequence covering
    every step. ``tokens``, ``z0_scale`` and ``v0_scale`` describe the random
    context and initial condition the ``simulate`` command draws.
    """

    mu: float = 0.9
    alpha: float = 1.0
    beta_schedule: Union[float, Tuple[float, ...]] = 0.1
    tau: float = 1.0
    steps: int = 100
    tokens: int = 8
    z0_scale: float = 1.0
    v0_scale: float = 0.0

    def __post_init__(self):
        if not self.tau > 0:
            raise DomainError(f"tau must be positive, got {self.tau}")
        if self.steps < 1:
            raise DomainError(f"steps must be at least 1, got {self.steps}")
        if self.tokens < 1:
            raise DomainError(f"tokens must be at least 1, got {self.tokens}")
        if not isinstance(self.beta_schedule, (int, float)):
            schedule = tuple(float(b) for b in self.beta_schedule)
            if len(schedule) == 1:
                object.__setattr__(self, "beta_schedule", schedule[0])
            elif len(schedule) < self.steps:
                raise DomainError(
                    f"beta schedule has {len(schedule)} entries for {self.steps} steps"
                )
            else:
                object.__setattr__(self, "beta_schedule", schedule)

    def beta(self, k: int) -> float:
        if isinstance(self.beta_schedule, tuple):
            return self.beta_schedule[k]
        return float(self.beta_schedule)


def _context(x) -> np.ndarray:
    ctx = np.atleast_2d(np.asarray(getattr(x, "data", x), dtype=np.float64))
    if ctx.shape[0] == 0:
        raise DomainError("context has no tokens")
    return ctx


def _projections(z, x, weights) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    ctx = _context(x)
    w_q = np.asarray(weights.w_q)
    if ctx.shape[1] != z.size or w_q.shape[1] != z.size:
        raise ShapeError("dynamics", z.shape, ctx.shape)
    query = w_q @ z
    keys = ctx @ np.asarray(weights.w_k).T
    return z, query, keys


def retrieval_scores(z, x, weights, tau: float) -> np.ndarray:
    """``<W_Q z, W_K x_i> / (tau sqrt(d))`` for every context row."""
    if not tau > 0:
        raise DomainError(f"tau must be positive, got {tau}")
    z, query, keys = _projections(z, x, weights)
    return keys @ query / (tau * math.sqrt(z.size))


def retrieval_weights(z, x, weights, tau: float) -> np.ndarray:
    scores = retrieval_scores(z, x, weights, tau)
    shifted = np.exp(scores - scores.max())
    return shifted / shifted.sum()


def soft_retrieval(z, x, weights, tau: float = 1.0) -> np.ndarray:
    """Softmax-weighted mixture of the value projections ``W_V x_i``."""
    sigma = retrieval_weights(z, x, weights, tau)
    values = _context(x) @ np.asarray(weights.w_v).T
    return sigma @ values


def attention_energy(z, x, weights, tau: float = 1.0) -> float:
    """Free energy ``-tau log sum_i exp(score_i)``, max-shifted."""
    scores = retrieval_scores(z, x, weights, tau)
    top = scores.max()
    return float(-tau * (top + np.log(np.exp(scores - top).sum())))


def energy_gradient(z, x, weights, tau: float = 1.0) -> np.ndarray:
    """``-(1/sqrt(d)) W_Q^T sum_i sigma_i W_K x_i``."""
    sigma = retrieval_weights(z, x, weights, tau)
    z, _, keys = _projections(z, x, weights)
    return -(np.asarray(weights.w_q).T @ (sigma @ keys)) / math.sqrt(z.size)


def column_form(weights: ModelWeights) -> ModelWeights:
    """Weights whose column-vector projections match the model's row-vector ones."""
    return weights.replace(w_q=weights.w_q.T, w_k=weights.w_k.T, w_v=weights.w_v.T)


def hamiltonian_step(
    state: HamiltonianState, x, weights, params: DynamicsParams, k: int
) -> HamiltonianState:
    """Advance one step: velocity from the current position, then position from the new velocity."""
    if not 0 <= k < params.steps:
        raise DomainError(f"step index {k} outside [0, {params.steps})")
    z = state.z
    velocity = params.mu * state.v
    if params.alpha:
        velocity = velocity + params.alpha * (soft_retrieval(z, x, weights, params.tau) - z)
    beta = params.beta(k)
    if beta:
        velocity = velocity - beta * energy_gradient(z, x, weights, params.tau)
    return HamiltonianState(z + velocity, velocity)


@dataclass(frozen=True)
class TrajectoryPoint:
    step: int
    state: HamiltonianState
    kinetic: float
    potential: float


def simulate_trajectory(
    z0, x, weights, params: DynamicsParams, v0=None
) -> List[TrajectoryPoint]:
    """Integrate ``params.steps`` steps; returns ``steps + 1`` points including the start."""
    z0 = np.asarray(z0, dtype=np.float64).reshape(-1)
    state = HamiltonianState(z0, np.zeros_like(z0) if v0 is None else v0)
    start = attention_energy(state.z, x, weights, params.tau)
    points = [TrajectoryPoint(0, state, state.kinetic, start)]
    for k in range(params.steps):
        state = hamiltonian_step(state, x, weights, params, k)
        points.append(
            TrajectoryPoint(
                k + 1, state, state.kinetic, attention_energy(state.z, x, weights, params.tau)
            )
        )
    return points


def classify_phase(kinetic: float, peak: float) -> str:
    """``gaseous`` at or above half the peak kinetic energy, ``solid`` below 5% of it."""
    if peak <= 0.0 or kinetic < COLD_FRACTION * peak:
        return "solid"
    if kinetic >= HOT_FRACTION * peak:
        return "gaseous"
    return "liquid"


@dataclass(frozen=True)
class PhaseSummary:
    counts: Dict[str, int]
    peak_kinetic: float
    initial_kinetic: float
    final_kinetic: float
    settled_step: Optional[int]

    def as_dict(self) -> Dict[str, object]:
        return {
            "gaseous_steps": self.counts["gaseous"],
            "liquid_steps": self.counts["liquid"],
            "solid_steps": self.counts["solid"],
            "peak_kinetic": self.peak_kinetic,
            "initial_kinetic": self.initial_kinetic,
            "final_kinetic": self.final_kinetic,
            "settled_step": self.settled_step,
        }


def phase_summary(trajectory: Sequence[TrajectoryPoint]) -> PhaseSummary:
    """Count points per phase and find the step after which the system stays solid."""
    if not trajectory:
        raise DomainError("empty trajectory")
    peak = max(point.kinetic for point in trajectory)
    phases = [classify_phase(point.kinetic, peak) for point in trajectory]
    counts = {phase: phases.count(phase) for phase in PHASES}
    settled = None
    for point, phase in zip(reversed(trajectory), reversed(phases)):
        if phase != "solid":
            break
        settled = point.step
    return PhaseSummary(
        counts, peak, trajectory[0].kinetic, trajectory[-1].kinetic, settled
    )


def sample_initial_condition(
    rng: np.random.Generator, weights: ModelWeights, params: DynamicsParams, pe_scale: float = 0.15
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Random context, start position and start velocity.

    The context embeds ``params.tokens`` random tokens; the last one's
    embedding, scaled by ``z0_scale``, plus Gaussian noise is the start.

    Returns:
        Tuple of (context ``n x d``, z0, v0)
    """
    tokens = rng.integers(0, weights.vocab, size=params.tokens)
    x = embed_sequence(tokens, weights, pe_scale).data
    z0 = params.z0_scale * (x[-1] + rng.standard_normal(weights.d))
    v0 = params.v0_scale * rng.standard_normal(weights.d)
    return x, z0, v0


def trajectory_columns(d: int) -> List[str]:
    return (
        ["step"]
        + [f"z{i}" for i in range(d)]
        + [f"v{i}" for i in range(d)]
        + ["kinetic", "potential"]
    )


def write_trajectory_csv(path: Union[str, Path], trajectory: Sequence[TrajectoryPoint]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d = trajectory[0].state.z.size if trajectory else 0
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(trajectory_columns(d))
        for point in trajectory:
            writer.writerow(
                [str(point.step)]
                + [repr(float(value)) for value in point.state.z]
                + [repr(float(value)) for value in point.state.v]
                + [repr(float(point.kinetic)), repr(float(point.potential))]
            )
    return path
