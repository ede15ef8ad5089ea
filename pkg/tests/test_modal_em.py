import numpy as np
import pytest
from numpy.testing import assert_allclose

from mixmodes import (
    GaussianMixture,
    MemConfig,
    NumericalError,
    ValidationError,
    damping_weight,
    log_density_gradient,
    m_step_batched,
    m_step_reference,
    mem_step,
    run_mem,
)
from mixmodes.modal_em import _solve_spd_stack

from conftest import random_mixture


def q_gradient(mixture, z_row, x):
    """Gradient of the weighted surrogate sum_k z_k log N(x; mu_k, S_k)."""
    mat = np.einsum("k,kij->ij", z_row, mixture.precisions)
    return z_row @ mixture.precision_means - mat @ x


def symmetric_1d_mixture():
    return GaussianMixture(
        np.array([0.5, 0.5]),
        np.array([[0.0], [1.0]]),
        np.ones((2, 1, 1)),
    )


def two_scale_mixture():
    # narrow component at 0, wide component at (10, 0)
    return GaussianMixture(
        np.array([0.5, 0.5]),
        np.array([[0.0, 0.0], [10.0, 0.0]]),
        np.array([np.eye(2), 25.0 * np.eye(2)]),
    )


class TestMemConfig:
    def test_defaults(self):
        config = MemConfig()
        assert config.tolerance == 1e-5
        assert config.max_iterations == 1000
        assert config.damping_enabled is True
        assert config.damping_rate == 0.1
        assert config.record_paths is False

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"tolerance": 0.0},
            {"tolerance": -1e-5},
            {"damping_rate": 0.0},
            {"max_iterations": 0},
            {"m_step_impl": "vectorised"},
        ],
    )
    def test_invalid_settings(self, kwargs):
        with pytest.raises(ValidationError):
            MemConfig(**kwargs)


class TestDampingWeight:
    def test_first_iteration(self):
        assert_allclose(damping_weight(1, 0.1), 1.0 - np.exp(-0.1), rtol=1e-15)
        assert_allclose(damping_weight(1, 0.1), 0.09516, atol=5e-6)

    def test_tenth_iteration(self):
        assert_allclose(damping_weight(10, 0.1), 1.0 - np.exp(-1.0), rtol=1e-15)
        assert_allclose(damping_weight(10, 0.1), 0.63212, atol=5e-6)

    def test_limit(self):
        assert abs(damping_weight(200, 0.1) - 1.0) < 1e-8

    def test_strictly_increasing(self):
        weights = [damping_weight(t, 0.1) for t in range(1, 51)]
        assert all(b > a for a, b in zip(weights, weights[1:]))
        assert all(0.0 < w < 1.0 for w in weights)

    def test_invalid_arguments(self):
        with pytest.raises(ValidationError):
            damping_weight(0, 0.1)
        with pytest.raises(ValidationError):
            damping_weight(3, 0.0)


class TestMStepReference:
    def test_single_component_returns_mean(self):
        rng = np.random.default_rng(7)
        mixture = random_mixture(rng, 3, 1)
        assert_allclose(m_step_reference(mixture, [1.0]), mixture.means[0], atol=1e-12)

    def test_common_covariance_closed_form(self):
        rng = np.random.default_rng(8)
        base = random_mixture(rng, 3, 4)
        shared = np.broadcast_to(base.covariances[0], base.covariances.shape).copy()
        mixture = GaussianMixture(base.weights, base.means, shared)
        z = rng.random(4)
        z /= z.sum()
        assert_allclose(m_step_reference(mixture, z), z @ mixture.means, atol=1e-12)

    def test_one_dimensional_hand_value(self):
        mixture = GaussianMixture(
            np.array([0.5, 0.5]),
            np.array([[0.0], [4.0]]),
            np.array([[[1.0]], [[4.0]]]),
        )
        z = np.array([0.5, 0.5])
        result = m_step_reference(mixture, z)
        assert_allclose(result, [0.8], rtol=1e-14)
        assert_allclose(q_gradient(mixture, z, result), [0.0], atol=1e-14)

    def test_result_zeroes_surrogate_gradient(self):
        rng = np.random.default_rng(9)
        for trial in range(20):
            d = (1, 2, 3, 5)[trial % 4]
            g = trial % 6 + 1
            mixture = random_mixture(rng, d, g)
            z = rng.random(g)
            z /= z.sum()
            x_star = m_step_reference(mixture, z)
            bound = 1e-8 * (1.0 + np.linalg.norm(x_star))
            assert np.linalg.norm(q_gradient(mixture, z, x_star)) < bound

    def test_one_hot_responsibilities(self):
        rng = np.random.default_rng(10)
        mixture = random_mixture(rng, 2, 3)
        z = np.array([0.0, 1.0, 0.0])
        assert_allclose(m_step_reference(mixture, z), mixture.means[1], atol=1e-12)

    @pytest.mark.parametrize(
        "z_row",
        [[0.5, 0.6], [0.5, -0.5, 1.0], [0.2, 0.2, 0.2]],
    )
    def test_invalid_responsibilities(self, z_row):
        rng = np.random.default_rng(11)
        mixture = random_mixture(rng, 2, 3)
        with pytest.raises(ValidationError):
            m_step_reference(mixture, z_row)


class TestMStepBatched:
    def test_single_row_matches_reference(self):
        rng = np.random.default_rng(12)
        mixture = random_mixture(rng, 3, 4)
        z = rng.random((1, 4))
        z /= z.sum(axis=1, keepdims=True)
        assert_allclose(
            m_step_batched(mixture, z), m_step_reference(mixture, z[0])[None, :],
            atol=1e-12,
        )

    def test_matches_reference_loop_across_shapes(self):
        rng = np.random.default_rng(13)
        for trial in range(50):
            d = (1, 2, 3, 5)[trial % 4]
            g = trial % 6 + 1
            mixture = random_mixture(rng, d, g)
            z = rng.random((100, g))
            z /= z.sum(axis=1, keepdims=True)
            batched = m_step_batched(mixture, z)
            looped = np.stack([m_step_reference(mixture, row) for row in z])
            assert np.max(np.abs(batched - looped)) < 1e-10

    def test_identical_rows_give_identical_outputs(self):
        rng = np.random.default_rng(14)
        mixture = random_mixture(rng, 2, 3)
        row = rng.random(3)
        row /= row.sum()
        out = m_step_batched(mixture, np.tile(row, (7, 1)))
        assert np.all(out == out[0])

    def test_shape_validation(self):
        rng = np.random.default_rng(15)
        mixture = random_mixture(rng, 2, 3)
        with pytest.raises(ValidationError):
            m_step_batched(mixture, np.full((4, 2), 0.5))

    def test_solver_failure_names_offending_row(self):
        mats = np.array([np.eye(2), np.eye(2), np.zeros((2, 2)), np.eye(2)])
        rhs = np.ones((4, 2))
        with pytest.raises(NumericalError, match="row 2"):
            _solve_spd_stack(mats, rhs)


class TestMemStep:
    def test_damping_disabled_equals_full_step(self):
        rng = np.random.default_rng(16)
        mixture = random_mixture(rng, 2, 3)
        x = rng.normal(size=(10, 2)) * 3.0
        z = mixture.component_posteriors(x)
        config = MemConfig(damping_enabled=False)
        assert_allclose(mem_step(mixture, x, 1, config), m_step_batched(mixture, z))

    def test_single_component_moves_along_segment(self):
        rng = np.random.default_rng(17)
        mixture = random_mixture(rng, 3, 1)
        x = rng.normal(size=(6, 3)) * 4.0
        for t in (1, 2, 5):
            updated = mem_step(mixture, x, t, MemConfig())
            w = damping_weight(t, 0.1)
            assert_allclose(updated, x + w * (mixture.means[0] - x), atol=1e-12)

    def test_single_step_never_decreases_log_density(self):
        rng = np.random.default_rng(18)
        for trial in range(10):
            mixture = random_mixture(rng, 2, 4)
            x = rng.normal(size=(30, 2)) * 4.0
            config = MemConfig(damping_enabled=bool(trial % 2))
            for t in range(1, 6):
                updated = mem_step(mixture, x, t, config)
                before = mixture.log_density(x)
                after = mixture.log_density(updated)
                assert np.all(after >= before - 1e-12)
                x = updated

    def test_iteration_index_validated(self):
        rng = np.random.default_rng(19)
        mixture = random_mixture(rng, 2, 2)
        with pytest.raises(ValidationError):
            mem_step(mixture, np.zeros((1, 2)), 0, MemConfig())


class TestRunMem:
    def test_separated_means_freeze_quickly(self):
        rng = np.random.default_rng(20)
        d, g = 3, 4
        covariances = np.stack([np.eye(d) for _ in range(g)])
        directions = rng.normal(size=(g, d))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        means = directions * (15.0 * np.arange(g)[:, None] + 5.0)
        weights = rng.random(g) + 0.5
        mixture = GaussianMixture(weights / weights.sum(), means, covariances)
        result = run_mem(mixture, means.copy())
        assert result.converged
        assert result.iterations <= 5
        assert np.max(np.linalg.norm(result.converged_points - means, axis=1)) < 1e-3
        for mode in result.converged_points:
            bound = 1e-4 * (1.0 + np.linalg.norm(mode))
            assert np.linalg.norm(log_density_gradient(mixture, mode)) < bound

    def test_single_component_converges_to_mean(self):
        rng = np.random.default_rng(21)
        mixture = random_mixture(rng, 2, 1)
        starts = mixture.means[0] + rng.normal(size=(12, 2)) * 2.0
        result = run_mem(mixture, starts)
        assert result.converged
        assert np.max(np.abs(result.converged_points - mixture.means[0])) < 1e-3

    def test_symmetric_unimodal_1d(self):
        mixture = symmetric_1d_mixture()
        starts = np.linspace(-3.0, 4.0, 15)[:, None]
        result = run_mem(mixture, starts)
        assert result.converged
        assert np.max(np.abs(result.converged_points - 0.5)) < 1e-3

    def test_iteration_cap_flags_unconverged(self):
        mixture = GaussianMixture(np.array([1.0]), np.zeros((1, 2)), np.eye(2)[None])
        result = run_mem(
            mixture, np.array([[50.0, -30.0]]), MemConfig(max_iterations=1)
        )
        assert not result.converged
        assert result.iterations == 1
        assert list(result.unconverged_indices) == [0]
        assert result.per_point_converged_at[0] == -1

    def test_per_point_iteration_bookkeeping(self):
        rng = np.random.default_rng(22)
        mixture = random_mixture(rng, 2, 3)
        starts = rng.normal(size=(20, 2)) * 3.0
        result = run_mem(mixture, starts)
        assert result.converged
        assert result.unconverged_indices.size == 0
        assert np.all(result.per_point_converged_at >= 1)
        assert np.max(result.per_point_converged_at) == result.iterations

    def test_recorded_paths(self):
        rng = np.random.default_rng(23)
        mixture = random_mixture(rng, 2, 2)
        starts = rng.normal(size=(5, 2)) * 2.0
        result = run_mem(mixture, starts, MemConfig(record_paths=True))
        assert len(result.paths) == result.iterations + 1
        assert_allclose(result.paths[0], starts)
        assert_allclose(result.paths[-1], result.converged_points)

    def test_ascent_from_start_to_finish(self):
        rng = np.random.default_rng(24)
        for _ in range(5):
            mixture = random_mixture(rng, 3, 4)
            starts = rng.normal(size=(25, 3)) * 4.0
            result = run_mem(mixture, starts)
            initial = mixture.log_density(starts)
            assert np.all(result.final_log_density >= initial - 1e-10)

    def test_per_iteration_ascent_along_paths(self):
        rng = np.random.default_rng(25)
        mixture = random_mixture(rng, 2, 4)
        starts = rng.normal(size=(15, 2)) * 4.0
        result = run_mem(mixture, starts, MemConfig(record_paths=True))
        previous = mixture.log_density(result.paths[0])
        for snapshot in result.paths[1:]:
            current = mixture.log_density(snapshot)
            assert np.all(current >= previous - 1e-12)
            previous = current

    def test_translation_equivariance(self):
        rng = np.random.default_rng(26)
        mixture = random_mixture(rng, 2, 3)
        starts = rng.normal(size=(20, 2)) * 3.0
        shift = np.array([13.25, -7.5])
        shifted = GaussianMixture(
            mixture.weights, mixture.means + shift, mixture.covariances
        )
        config = MemConfig(tolerance=1e-10)
        base = run_mem(mixture, starts, config)
        moved = run_mem(shifted, starts + shift, config)
        deviation = np.max(
            np.abs(moved.converged_points - shift - base.converged_points)
        )
        assert deviation < 1e-8

    def test_one_step_translation_equivariance(self):
        rng = np.random.default_rng(27)
        mixture = random_mixture(rng, 3, 3)
        x = rng.normal(size=(10, 3)) * 2.0
        shift = np.array([4.0, -11.0, 0.5])
        shifted = GaussianMixture(
            mixture.weights, mixture.means + shift, mixture.covariances
        )
        config = MemConfig()
        stepped = mem_step(mixture, x, 3, config)
        stepped_shifted = mem_step(shifted, x + shift, 3, config)
        assert np.max(np.abs(stepped_shifted - shift - stepped)) < 1e-12

    def test_damping_increases_iteration_count(self):
        mixture = two_scale_mixture()
        start = np.array([[-5.0, 0.0]])
        damped = run_mem(mixture, start, MemConfig(damping_enabled=True))
        undamped = run_mem(mixture, start, MemConfig(damping_enabled=False))
        assert damped.converged and undamped.converged
        assert damped.iterations >= undamped.iterations

    def test_damping_protects_the_narrow_mode(self):
        # from the density saddle the full step overshoots into the wide
        # basin while the damped path stays in the narrow one
        mixture = two_scale_mixture()
        start = np.array([[-5.0, 0.0]])
        damped = run_mem(mixture, start, MemConfig(damping_enabled=True))
        undamped = run_mem(mixture, start, MemConfig(damping_enabled=False))
        assert np.linalg.norm(damped.converged_points[0]) < 0.5
        assert np.linalg.norm(undamped.converged_points[0] - [10.0, 0.0]) < 0.5

    def test_loop_implementation_matches_batched(self):
        rng = np.random.default_rng(3)
        mixture = random_mixture(rng, 2, 3)
        starts = rng.normal(size=(25, 2)) * 3.0
        batched = run_mem(mixture, starts, MemConfig(m_step_impl="batched"))
        looped = run_mem(mixture, starts, MemConfig(m_step_impl="loop"))
        assert batched.iterations == looped.iterations
        assert_allclose(
            batched.converged_points, looped.converged_points, atol=1e-8
        )

    def test_underflowed_posteriors_are_harmless(self):
        mixture = GaussianMixture(
            np.array([0.5, 0.5]),
            np.array([[0.0], [100.0]]),
            np.ones((2, 1, 1)),
        )
        z = mixture.component_posteriors(np.array([[-50.0]]))
        assert_allclose(z, [[1.0, 0.0]], atol=0.0)
        result = run_mem(mixture, np.array([[-50.0]]))
        assert result.converged
        assert np.all(np.isfinite(result.converged_points))
        assert abs(result.converged_points[0, 0]) < 1e-3

    def test_non_finite_starts_rejected(self):
        rng = np.random.default_rng(28)
        mixture = random_mixture(rng, 2, 2)
        with pytest.raises(ValidationError):
            run_mem(mixture, np.array([[np.nan, 0.0]]))


class TestLogDensityGradient:
    def test_zero_at_single_gaussian_mean(self):
        rng = np.random.default_rng(29)
        mixture = random_mixture(rng, 3, 1)
        assert_allclose(
            log_density_gradient(mixture, mixture.means[0]), np.zeros(3), atol=1e-12
        )

    def test_zero_at_symmetry_point(self):
        mixture = symmetric_1d_mixture()
        assert_allclose(log_density_gradient(mixture, [0.5]), [0.0], atol=1e-12)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(30)
        for trial in range(20):
            d = (1, 2, 3, 5)[trial % 4]
            mixture = random_mixture(rng, d, trial % 4 + 1)
            x = rng.normal(size=d) * 2.0
            exact = log_density_gradient(mixture, x)
            numeric = np.empty(d)
            for j in range(d):
                h = 1e-6 * (1.0 + abs(x[j]))
                left, right = x.copy(), x.copy()
                left[j] -= h
                right[j] += h
                numeric[j] = (
                    mixture.log_density(right[None])[0]
                    - mixture.log_density(left[None])[0]
                ) / (2.0 * h)
            bound = 1e-6 * (1.0 + np.linalg.norm(exact))
            assert np.linalg.norm(numeric - exact) < bound

    def test_shape_validated(self):
        rng = np.random.default_rng(31)
        mixture = random_mixture(rng, 2, 2)
        with pytest.raises(ValidationError):
            log_density_gradient(mixture, [1.0, 2.0, 3.0])
