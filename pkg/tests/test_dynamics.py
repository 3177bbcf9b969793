"""Tests for dynamics.py."""

import csv
import math

import numpy as np
import pytest

from eer_cli.dynamics import (
    DynamicsParams,
    HamiltonianState,
    attention_energy,
    classify_phase,
    column_form,
    energy_gradient,
    hamiltonian_step,
    phase_summary,
    retrieval_weights,
    sample_initial_condition,
    simulate_trajectory,
    soft_retrieval,
    trajectory_columns,
    write_trajectory_csv,
)
from eer_cli.errors import DomainError, ShapeError
from eer_cli.model import init_weights
from eer_cli.tensor import finite_diff_gradient, seeded_rng

from .conftest import scaled_weights

FROZEN = dict(mu=0.0, alpha=0.0, beta_schedule=0.0)


class TestDynamicsParams:
    """Test cases for integrator coefficients."""

    def test_defaults(self):
        params = DynamicsParams()
        assert (params.mu, params.alpha, params.beta(0)) == (0.9, 1.0, 0.1)
        assert (params.tau, params.steps) == (1.0, 100)

    def test_schedule(self):
        """Per-step schedules are indexed; one-element schedules collapse to a constant."""
        params = DynamicsParams(beta_schedule=[0.3, 0.2, 0.1], steps=3)
        assert [params.beta(k) for k in range(3)] == [0.3, 0.2, 0.1]
        assert DynamicsParams(beta_schedule=[0.4]).beta_schedule == 0.4

    @pytest.mark.parametrize(
        "kwargs",
        [dict(tau=0.0), dict(steps=0), dict(tokens=0), dict(beta_schedule=[0.1, 0.2], steps=5)],
    )
    def test_invalid(self, kwargs):
        """Out-of-range coefficients raise DomainError."""
        with pytest.raises(DomainError):
            DynamicsParams(**kwargs)


class TestHamiltonianState:
    """Test cases for the phase-space state."""

    def test_kinetic(self):
        assert HamiltonianState([0.0, 0.0], [3.0, 4.0]).kinetic == 12.5

    def test_mismatched_shapes(self):
        with pytest.raises(ShapeError):
            HamiltonianState([0.0, 0.0], [1.0])

    def test_non_finite(self):
        with pytest.raises(DomainError):
            HamiltonianState([np.nan], [0.0])


class TestSoftRetrieval:
    """Test cases for the retrieval field."""

    def test_single_token(self, small_weights, rng):
        """One context row retrieves its value projection."""
        x = rng.standard_normal((1, 8))
        out = soft_retrieval(rng.standard_normal(8), x, small_weights)
        np.testing.assert_allclose(out, small_weights.w_v @ x[0], atol=1e-12)

    def test_zero_query_is_uniform_mixture(self, small_weights, rng):
        """W_Q = 0 averages the value projections."""
        weights = scaled_weights(small_weights, w_q=0.0)
        x = rng.standard_normal((5, 8))
        out = soft_retrieval(rng.standard_normal(8), x, weights)
        np.testing.assert_allclose(out, (x @ weights.w_v.T).mean(axis=0), atol=1e-12)

    def test_low_temperature_picks_argmax(self, small_weights, rng):
        """Near zero temperature the best-scoring row dominates."""
        a = rng.standard_normal(8)
        x = np.vstack([a, -a, 0.5 * a, -0.5 * a])
        z = np.linalg.solve(small_weights.w_q, small_weights.w_k @ a)
        out = soft_retrieval(z, x, small_weights, tau=1e-3)
        np.testing.assert_allclose(out, small_weights.w_v @ a, atol=1e-6)

    def test_output_in_convex_hull(self, small_weights, rng):
        """The output is a convex combination of the value projections."""
        x = rng.standard_normal((4, 8))
        z = rng.standard_normal(8)
        sigma = retrieval_weights(z, x, small_weights, 1.0)
        assert (sigma >= 0).all()
        assert sigma.sum() == pytest.approx(1.0, abs=1e-12)
        values = x @ small_weights.w_v.T
        np.testing.assert_allclose(soft_retrieval(z, x, small_weights), sigma @ values)
        coeffs, *_ = np.linalg.lstsq(values.T, soft_retrieval(z, x, small_weights), rcond=None)
        np.testing.assert_allclose(coeffs, sigma, atol=1e-8)

    def test_sharpening_with_temperature(self, small_weights, rng):
        """Lower temperature never lowers the weight on the best-aligned row."""
        x = rng.standard_normal((6, 8))
        z = rng.standard_normal(8)
        best = None
        previous = 0.0
        for tau in (5.0, 2.0, 1.0, 0.5, 0.25, 0.1, 0.01):
            sigma = retrieval_weights(z, x, small_weights, tau)
            best = int(np.argmax(sigma)) if best is None else best
            assert sigma[best] >= previous - 1e-15
            previous = sigma[best]

    def test_column_form_matches_model_attention(self, small_weights, rng):
        """Transposed weights give the model's row-vector attention for one query."""
        x = rng.standard_normal((5, 8))
        z = rng.standard_normal(8)
        w = small_weights
        scores = (z @ w.w_q) @ (x @ w.w_k).T / math.sqrt(8)
        sigma = np.exp(scores - scores.max())
        sigma /= sigma.sum()
        expected = sigma @ (x @ w.w_v)
        np.testing.assert_allclose(soft_retrieval(z, x, column_form(w)), expected, atol=1e-12)
        assert not np.allclose(soft_retrieval(z, x, w), expected)

    def test_empty_context(self, small_weights):
        with pytest.raises(DomainError):
            soft_retrieval(np.zeros(8), np.zeros((0, 8)), small_weights)

    def test_dimension_mismatch(self, small_weights):
        with pytest.raises(ShapeError):
            soft_retrieval(np.zeros(3), np.zeros((2, 3)), small_weights)


class TestEnergy:
    """Test cases for the free energy and its gradient."""

    def test_zero_query(self, small_weights, rng):
        """Zero scores over four rows give -ln 4."""
        weights = scaled_weights(small_weights, w_q=0.0)
        energy = attention_energy(rng.standard_normal(8), rng.standard_normal((4, 8)), weights)
        assert energy == pytest.approx(-math.log(4), abs=1e-12)

    def test_single_token(self, small_weights, rng):
        """One row gives minus its scaled score at any temperature."""
        x = rng.standard_normal((1, 8))
        z = rng.standard_normal(8)
        score = float((small_weights.w_q @ z) @ (small_weights.w_k @ x[0])) / math.sqrt(8)
        for tau in (0.5, 1.0, 2.0):
            assert attention_energy(z, x, small_weights, tau) == pytest.approx(-score, abs=1e-12)

    @pytest.mark.parametrize("tau", [1.0, 2.0])
    def test_matches_scalar_reference(self, small_weights, rng, tau):
        """The shifted log-sum-exp agrees with a direct scalar evaluation."""
        x = rng.standard_normal((6, 8))
        z = rng.standard_normal(8)
        query = small_weights.w_q @ z
        scores = [float(query @ (small_weights.w_k @ row)) / (tau * math.sqrt(8)) for row in x]
        expected = -tau * math.log(math.fsum(math.exp(s) for s in scores))
        assert attention_energy(z, x, small_weights, tau) == pytest.approx(expected, abs=1e-12)

    def test_large_scores_stay_finite(self, small_weights, rng):
        """Huge scores do not overflow."""
        weights = scaled_weights(small_weights, w_q=1e3, w_k=1e3)
        energy = attention_energy(rng.standard_normal(8), rng.standard_normal((3, 8)), weights)
        assert math.isfinite(energy)

    def test_gradient_zero_query(self, small_weights, rng):
        weights = scaled_weights(small_weights, w_q=0.0)
        grad = energy_gradient(rng.standard_normal(8), rng.standard_normal((3, 8)), weights)
        np.testing.assert_array_equal(grad, np.zeros(8))

    def test_gradient_single_token(self, small_weights, rng):
        """With one row the gradient is constant in z."""
        x = rng.standard_normal((1, 8))
        expected = -(small_weights.w_q.T @ (small_weights.w_k @ x[0])) / math.sqrt(8)
        for _ in range(3):
            grad = energy_gradient(rng.standard_normal(8), x, small_weights)
            np.testing.assert_allclose(grad, expected, atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        """The analytic gradient agrees with central differences on random configurations."""
        rng = seeded_rng(42)
        for trial in range(100):
            weights = init_weights(rng)
            n = int(rng.integers(1, 17))
            x = rng.standard_normal((n, 8))
            z = rng.standard_normal(8)
            tau = float(rng.uniform(0.5, 2.0))
            numeric = finite_diff_gradient(lambda v: attention_energy(v, x, weights, tau), z)
            analytic = energy_gradient(z, x, weights, tau)
            np.testing.assert_allclose(analytic, numeric, atol=1e-6, err_msg=f"trial {trial}")


class TestHamiltonianStep:
    """Test cases for the integrator."""

    def test_frozen_system(self, small_weights, rng):
        """No momentum, field or gravity leaves the state still."""
        params = DynamicsParams(**FROZEN, steps=5)
        state = HamiltonianState(rng.standard_normal(8), rng.standard_normal(8))
        after = hamiltonian_step(state, rng.standard_normal((4, 8)), small_weights, params, 0)
        np.testing.assert_array_equal(after.v, np.zeros(8))
        np.testing.assert_array_equal(after.z, state.z)

    def test_ballistic_motion(self, small_weights, rng):
        """Unit momentum alone moves the position by the velocity each step."""
        params = DynamicsParams(mu=1.0, alpha=0.0, beta_schedule=0.0, steps=10)
        z0 = rng.standard_normal(8)
        v0 = rng.standard_normal(8)
        trajectory = simulate_trajectory(z0, rng.standard_normal((3, 8)), small_weights, params, v0)
        for point in trajectory:
            np.testing.assert_allclose(point.state.z, z0 + point.step * v0, atol=1e-12)
            assert point.kinetic == pytest.approx(0.5 * v0 @ v0, rel=1e-12)

    def test_velocity_first(self, small_weights, rng):
        """Without momentum or field the position moves by the gradient step at the old position."""
        params = DynamicsParams(mu=0.0, alpha=0.0, beta_schedule=0.3, steps=1)
        x = rng.standard_normal((4, 8))
        state = HamiltonianState(rng.standard_normal(8), rng.standard_normal(8))
        after = hamiltonian_step(state, x, small_weights, params, 0)
        expected = -0.3 * energy_gradient(state.z, x, small_weights)
        np.testing.assert_allclose(after.z - state.z, expected, atol=1e-14)
        np.testing.assert_array_equal(after.v, expected)

    def test_full_update(self, small_weights, rng):
        """All three forces combine as documented."""
        params = DynamicsParams(mu=0.5, alpha=0.7, beta_schedule=0.2, steps=1)
        x = rng.standard_normal((4, 8))
        state = HamiltonianState(rng.standard_normal(8), rng.standard_normal(8))
        after = hamiltonian_step(state, x, small_weights, params, 0)
        field = soft_retrieval(state.z, x, small_weights) - state.z
        expected_v = 0.5 * state.v + 0.7 * field - 0.2 * energy_gradient(state.z, x, small_weights)
        np.testing.assert_allclose(after.v, expected_v, atol=1e-14)
        np.testing.assert_allclose(after.z, state.z + expected_v, atol=1e-14)

    def test_step_index_range(self, small_weights):
        params = DynamicsParams(steps=2)
        state = HamiltonianState(np.zeros(8), np.zeros(8))
        with pytest.raises(DomainError):
            hamiltonian_step(state, np.ones((2, 8)), small_weights, params, 2)

    def test_gradient_descent_lowers_energy(self, small_weights, rng):
        """Pure gravity steps never raise the free energy."""
        params = DynamicsParams(mu=0.0, alpha=0.0, beta_schedule=0.05, steps=100)
        x = rng.standard_normal((2, 8))
        trajectory = simulate_trajectory(rng.standard_normal(8), x, small_weights, params)
        energies = [point.potential for point in trajectory]
        assert all(b <= a + 1e-12 for a, b in zip(energies, energies[1:]))

    def test_damped_descent_cools(self, small_weights, rng):
        """Momentum damping with weak gravity ends colder than it starts."""
        params = DynamicsParams(mu=0.9, alpha=0.0, beta_schedule=0.01, steps=100)
        x = rng.standard_normal((2, 8))
        v0 = rng.standard_normal(8)
        trajectory = simulate_trajectory(np.zeros(8), x, small_weights, params, v0)
        assert trajectory[-1].kinetic < trajectory[0].kinetic


class TestPhases:
    """Test cases for the phase diagnostics."""

    def test_classify(self):
        assert classify_phase(1.0, 1.0) == "gaseous"
        assert classify_phase(0.2, 1.0) == "liquid"
        assert classify_phase(0.01, 1.0) == "solid"
        assert classify_phase(0.0, 0.0) == "solid"

    def test_frozen_trajectory_is_solid(self, small_weights, rng):
        """A system at rest is solid from the first step."""
        params = DynamicsParams(**FROZEN, steps=4)
        trajectory = simulate_trajectory(
            rng.standard_normal(8), rng.standard_normal((3, 8)), small_weights, params
        )
        summary = phase_summary(trajectory)
        assert summary.counts == {"gaseous": 0, "liquid": 0, "solid": 5}
        assert summary.settled_step == 0
        assert summary.as_dict()["solid_steps"] == 5

    def test_ballistic_trajectory_is_gaseous(self, small_weights, rng):
        """Constant kinetic energy never settles."""
        params = DynamicsParams(mu=1.0, alpha=0.0, beta_schedule=0.0, steps=4)
        trajectory = simulate_trajectory(
            np.zeros(8), rng.standard_normal((3, 8)), small_weights, params, np.ones(8)
        )
        summary = phase_summary(trajectory)
        assert summary.counts["gaseous"] == 5
        assert summary.settled_step is None
        assert summary.peak_kinetic == summary.final_kinetic == 4.0

    def test_empty(self):
        with pytest.raises(DomainError):
            phase_summary([])


class TestTrajectoryIO:
    """Test cases for initial conditions and CSV export."""

    def test_initial_condition(self, small_weights):
        """Draws have the configured shapes and repeat under a seed."""
        params = DynamicsParams(tokens=5, v0_scale=0.5)
        x, z0, v0 = sample_initial_condition(seeded_rng(1), small_weights, params)
        again = sample_initial_condition(seeded_rng(1), small_weights, params)
        assert x.shape == (5, 8)
        assert z0.shape == v0.shape == (8,)
        for first, second in zip((x, z0, v0), again):
            np.testing.assert_array_equal(first, second)

    def test_zero_velocity_scale(self, small_weights):
        params = DynamicsParams(v0_scale=0.0)
        _, _, v0 = sample_initial_condition(seeded_rng(2), small_weights, params)
        np.testing.assert_array_equal(v0, np.zeros(8))

    def test_csv(self, small_weights, rng, temp_dir):
        """One header and one row per point, floats round-tripping exactly."""
        params = DynamicsParams(steps=3)
        trajectory = simulate_trajectory(
            rng.standard_normal(8), rng.standard_normal((4, 8)), small_weights, params
        )
        path = write_trajectory_csv(temp_dir / "traj" / "trajectory.csv", trajectory)
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == trajectory_columns(8)
        assert rows[0][:2] == ["step", "z0"]
        assert rows[0][-2:] == ["kinetic", "potential"]
        assert len(rows) == 5
        assert float(rows[-1][-1]) == trajectory[-1].potential
        assert [int(row[0]) for row in rows[1:]] == [0, 1, 2, 3]
