"""Tests for landscape.py."""

import csv

import numpy as np
import pytest

from eer_cli.data import generate_induction_batch
from eer_cli.errors import DomainError
from eer_cli.landscape import (
    LANDSCAPE_COLUMNS,
    compute_landscape,
    evaluate_loss,
    filter_normalized_direction,
    grid_axis,
    perturb,
    write_landscape_csv,
)
from eer_cli.optimizer import DECAYED
from eer_cli.tensor import seeded_rng
from eer_cli.training import EERConfig, train

CONFIG = EERConfig(t_steps=3)


class TestDirections:
    """Test cases for filter-normalized directions."""

    def test_matrix_norms_match(self, small_weights, rng):
        """Each decayed matrix gets a direction of its own Frobenius norm."""
        direction = filter_normalized_direction(small_weights, rng)
        for name, value in small_weights.arrays().items():
            assert direction[name].shape == value.shape
            if name in DECAYED:
                assert np.linalg.norm(direction[name]) == pytest.approx(np.linalg.norm(value))
            else:
                assert not direction[name].any()

    def test_zero_matrix(self, small_weights, rng):
        weights = small_weights.replace(w_q=np.zeros_like(small_weights.w_q))
        assert not filter_normalized_direction(weights, rng)["w_q"].any()

    def test_perturb(self, small_weights, rng):
        first = filter_normalized_direction(small_weights, rng)
        second = filter_normalized_direction(small_weights, rng)
        moved = perturb(small_weights, first, second, 0.5, -2.0)
        expected = small_weights.w_k + 0.5 * first["w_k"] - 2.0 * second["w_k"]
        np.testing.assert_allclose(moved.w_k, expected)


class TestGridAxis:
    """Test cases for grid coordinates."""

    def test_exact_center(self):
        axis = grid_axis(0.3, 7)
        assert axis[3] == 0.0
        assert axis[0] == -0.3 and axis[-1] == 0.3

    def test_single_point(self):
        assert grid_axis(1.0, 1).tolist() == [0.0]

    @pytest.mark.parametrize("extent, resolution", [(1.0, 4), (1.0, 0), (0.0, 3)])
    def test_invalid(self, extent, resolution):
        with pytest.raises(DomainError):
            grid_axis(extent, resolution)


class TestComputeLandscape:
    """Test cases for the loss grid."""

    def test_single_point_is_direct_loss(self, small_weights, small_batch):
        """A 1x1 grid equals the loss at the center weights."""
        grid = compute_landscape(small_weights, small_batch, CONFIG, seed=0, resolution=1)
        direct = evaluate_loss(small_weights, small_batch, CONFIG)
        assert grid.total[0, 0] == direct.total
        assert grid.ce[0, 0] == direct.task

    def test_center_of_larger_grid(self, small_weights, small_batch):
        grid = compute_landscape(small_weights, small_batch, CONFIG, seed=1, resolution=3)
        assert grid.center() == (
            evaluate_loss(small_weights, small_batch, CONFIG).total,
            evaluate_loss(small_weights, small_batch, CONFIG).task,
        )
        assert grid.total.shape == grid.ce.shape == (3, 3)
        assert grid.directions == ("seed1-dir1", "seed1-dir2")

    def test_seeded(self, small_weights, small_batch):
        """The same seed reproduces the grid and another seed changes it."""
        first = compute_landscape(small_weights, small_batch, CONFIG, seed=2, resolution=3)
        again = compute_landscape(small_weights, small_batch, CONFIG, seed=2, resolution=3)
        other = compute_landscape(small_weights, small_batch, CONFIG, seed=3, resolution=3)
        np.testing.assert_array_equal(first.total, again.total)
        assert not np.array_equal(first.total, other.total)

    def test_regularizers_add_to_ce(self, small_weights, small_batch):
        """The full objective never falls below the cross-entropy surface."""
        grid = compute_landscape(small_weights, small_batch, CONFIG, seed=4, resolution=3)
        assert (grid.total >= grid.ce).all()

    def test_even_resolution(self, small_weights, small_batch):
        with pytest.raises(DomainError):
            compute_landscape(small_weights, small_batch, CONFIG, resolution=2)

    def test_csv(self, temp_dir, small_weights, small_batch):
        """Rows run alpha-major with every value reloading exactly."""
        grid = compute_landscape(small_weights, small_batch, CONFIG, seed=5, resolution=3)
        path = write_landscape_csv(temp_dir / "out" / "landscape.csv", grid)
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        assert tuple(rows[0]) == LANDSCAPE_COLUMNS
        assert len(rows) == 10
        assert float(rows[1][0]) == grid.alphas[0] and float(rows[2][1]) == grid.betas[1]
        assert float(rows[5][2]) == grid.total[1, 1]
        assert float(rows[5][3]) == grid.ce[1, 1]


class TestTrainedLandscape:
    """Shape of the surface around weights that have been trained for a while."""

    def test_center_below_edge_mean(self):
        """Trained weights sit lower than the mean of the grid border."""
        config = EERConfig(
            d=8,
            d_ff=16,
            t_steps=3,
            t_eval=3,
            batch_size=8,
            train_len_min=8,
            train_len_max=12,
            epochs=200,
            lr=0.01,
            eval_interval=200,
            eval_lengths=(10,),
            eval_samples=2,
        )
        weights = train(config, quiet=True).weights
        batch = generate_induction_batch(seeded_rng(3), 4, 8, 12)
        grid = compute_landscape(weights, batch, config, seed=0, extent=1.0, resolution=5)
        edges = np.concatenate([grid.ce[0], grid.ce[-1], grid.ce[1:-1, 0], grid.ce[1:-1, -1]])
        assert edges.size == 16
        assert grid.ce[2, 2] <= edges.mean()
