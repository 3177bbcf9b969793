"""Pytest configuration and fixtures."""

import shutil
import tempfile
from pathlib import Path

import numpy as np
import pytest

from eer_cli.data import generate_induction_batch
from eer_cli.model import ModelWeights, init_weights
from eer_cli.tensor import seeded_rng


@pytest.fixture
def temp_dir():
    """Create a temporary directory for output files."""
    path = tempfile.mkdtemp()
    yield Path(path)
    shutil.rmtree(path)


@pytest.fixture
def rng():
    """Seeded random stream."""
    return seeded_rng(1234)


@pytest.fixture
def small_weights():
    """Randomly initialized d=8 weights over a 4-token vocabulary."""
    return init_weights(seeded_rng(7), d=8, d_ff=32, vocab=4)


@pytest.fixture
def small_batch():
    """Two full-sequence induction sequences of length 6."""
    return generate_induction_batch(seeded_rng(11), vocab=4, batch=2, length=6)


def scaled_weights(weights: ModelWeights, **factors) -> ModelWeights:
    """Copy of ``weights`` with the named fields multiplied by a factor."""
    arrays = {name: value.copy() for name, value in weights.arrays().items()}
    for name, factor in factors.items():
        arrays[name] = arrays[name] * factor
    return ModelWeights(**arrays)


def random_stochastic(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Row-stochastic matrix with Dirichlet rows."""
    return rng.dirichlet(np.ones(cols), size=rows)
