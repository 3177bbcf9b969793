"""Two-dimensional loss-landscape slices around a set of weights."""

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from .errors import DomainError
from .losses import LossBreakdown, total_loss
from .model import ModelWeights, SequenceBatch, looped_forward
from .optimizer import DECAYED

LANDSCAPE_COLUMNS = ("alpha", "beta", "total_loss", "ce_loss")

Direction = Dict[str, np.ndarray]


def filter_normalized_direction(weights: ModelWeights, rng: np.random.Generator) -> Direction:
    """Gaussian direction rescaled per matrix to that matrix's Frobenius norm.

    Biases and norm parameters get a zero direction, as do matrices whose
    norm is zero.
    """
    direction = {}
    for name, value in weights.arrays().items():
        noise = rng.standard_normal(value.shape)
        target = np.linalg.norm(value)
        size = np.linalg.norm(noise)
        if name not in DECAYED or target == 0.0 or size == 0.0:
            direction[name] = np.zeros_like(value)
        else:
            direction[name] = noise * (target / size)
    return direction


def perturb(
    weights: ModelWeights, first: Direction, second: Direction, a: float, b: float
) -> ModelWeights:
    """``weights + a * first + b * second``."""
    return ModelWeights(
        **{
            name: value + a * first[name] + b * second[name]
            for name, value in weights.arrays().items()
        }
    )


def grid_axis(extent: float, resolution: int) -> np.ndarray:
    """Symmetric coordinates in ``[-extent, extent]`` with an exact zero in the middle."""
    if resolution < 1 or resolution % 2 == 0:
        raise DomainError(f"resolution must be a positive odd number, got {resolution}")
    if resolution == 1:
        return np.zeros(1)
    if not extent > 0:
        raise DomainError(f"extent must be positive, got {extent}")
    axis = np.linspace(-extent, extent, resolution)
    axis[resolution // 2] = 0.0
    return axis


def evaluate_loss(weights: ModelWeights, batch: SequenceBatch, config) -> LossBreakdown:
    """Objective at ``weights`` on ``batch`` without recording gradients."""
    trace = looped_forward(
        batch,
        weights,
        config.t_steps,
        temperature=config.tau,
        gate=config.gate_for(batch.length),
        q=config.q,
        pe_scale=config.pe_scale,
    )
    return total_loss(trace, batch, config)


@dataclass
class LandscapeGrid:
    """Loss surfaces over a plane through the center weights.

    ``total[i, j]`` and ``ce[i, j]`` hold the losses at ``alphas[i]``, ``betas[j]``.
    """

    directions: Tuple[str, str]
    alphas: np.ndarray
    betas: np.ndarray
    total: np.ndarray
    ce: np.ndarray

    @property
    def resolution(self) -> int:
        return self.alphas.size

    def center(self) -> Tuple[float, float]:
        mid = self.resolution // 2
        return float(self.total[mid, mid]), float(self.ce[mid, mid])


def compute_landscape(
    weights: ModelWeights,
    batch: SequenceBatch,
    config,
    seed: int = 0,
    extent: float = 1.0,
    resolution: int = 11,
) -> LandscapeGrid:
    """Evaluate the full objective and the cross-entropy-only objective on a grid.

    Both directions come from one stream seeded by ``seed``.
    """
    axis = grid_axis(extent, resolution)
    rng = np.random.Generator(np.random.PCG64(seed))
    first = filter_normalized_direction(weights, rng)
    second = filter_normalized_direction(weights, rng)
    ce_config = replace(config, ablation_ce_only=True)
    total = np.zeros((resolution, resolution))
    ce = np.zeros((resolution, resolution))
    for i, a in enumerate(axis):
        for j, b in enumerate(axis):
            point = perturb(weights, first, second, a, b)
            total[i, j] = evaluate_loss(point, batch, config).total
            ce[i, j] = evaluate_loss(point, batch, ce_config).total
    names = (f"seed{seed}-dir1", f"seed{seed}-dir2")
    return LandscapeGrid(names, axis, axis.copy(), total, ce)


def write_landscape_csv(path: Union[str, Path], grid: LandscapeGrid) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(LANDSCAPE_COLUMNS)
        for i, a in enumerate(grid.alphas):
            for j, b in enumerate(grid.betas):
                cells = (a, b, grid.total[i, j], grid.ce[i, j])
                writer.writerow([repr(float(value)) for value in cells])
    return path
