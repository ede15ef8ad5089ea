import numpy as np
import pytest
from numpy.testing import assert_allclose

from mixmodes import (
    FitConfig,
    FitFailureError,
    ValidationError,
    em_fit,
    n_parameters,
    select_model,
)


def gaussian_sample(rng, n, mean, transform):
    return rng.normal(size=(n, len(mean))) @ transform.T + mean


class TestNParameters:
    @pytest.mark.parametrize(
        "model,g,d,expected",
        [
            ("VVV", 1, 2, 5),
            ("EII", 3, 2, 9),
            ("EEE", 2, 3, 13),
            ("VII", 2, 2, 7),
            ("EEI", 1, 4, 8),
            ("VVI", 3, 2, 14),
        ],
    )
    def test_counts(self, model, g, d, expected):
        assert n_parameters(model, g, d) == expected

    @pytest.mark.parametrize("model", ["VVE", "FREE", "XYZ"])
    def test_unfittable_models_rejected(self, model):
        with pytest.raises((ValidationError, ValueError)):
            n_parameters(model, 2, 2)

    def test_domain_checked(self):
        with pytest.raises(ValidationError):
            n_parameters("VVV", 0, 2)


class TestFitConfig:
    def test_defaults(self):
        config = FitConfig()
        assert config.component_range == tuple(range(1, 10))
        assert config.models == ("EII", "VII", "EEI", "VVI", "EEE", "VVV")
        assert config.em_tolerance == 1e-8
        assert config.em_max_iter == 500
        assert config.restarts == 5

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"component_range": ()},
            {"component_range": (0, 1)},
            {"models": ()},
            {"models": ("VVV", "ABC")},
            {"em_tolerance": 0.0},
            {"em_max_iter": 0},
            {"restarts": 0},
        ],
    )
    def test_invalid_settings(self, kwargs):
        with pytest.raises((ValidationError, ValueError)):
            FitConfig(**kwargs)


class TestEmFit:
    def test_single_gaussian_mean_recovery(self):
        rng = np.random.default_rng(60)
        mean = np.array([1.0, -2.0])
        transform = np.array([[1.0, 0.3], [0.0, 0.8]])
        n = 5000
        x = gaussian_sample(rng, n, mean, transform)
        result = em_fit(x, 1, "VVV", FitConfig(seed=0))
        sigma = transform @ transform.T
        bound = 3.0 * np.sqrt(np.diag(sigma) / n)
        assert np.all(np.abs(result.mixture.means[0] - mean) < bound)
        assert result.converged
        assert result.n_components == 1

    def test_spherical_mle_closed_form(self):
        rng = np.random.default_rng(61)
        x = rng.normal(size=(200, 3)) * np.array([2.0, 1.0, 0.5])
        result = em_fit(x, 1, "EII", FitConfig(seed=0))
        centered = x - x.mean(axis=0)
        msd = np.mean(centered ** 2)
        assert_allclose(result.mixture.covariances[0], msd * np.eye(3), rtol=1e-12)

    def test_two_spherical_clusters(self):
        rng = np.random.default_rng(57)
        a = rng.normal(size=(240, 2))
        b = rng.normal(size=(160, 2)) + [10.0, 0.0]
        x = np.vstack([a, b])
        result = em_fit(x, 2, "VII", FitConfig(seed=3))
        weights = np.sort(result.mixture.weights)
        assert np.max(np.abs(weights - [0.4, 0.6])) < 0.02
        posteriors = result.mixture.component_posteriors(x)
        assert posteriors.max(axis=1).min() > 0.999

    def test_log_likelihood_monotone_in_iterations(self):
        rng = np.random.default_rng(58)
        x = np.vstack(
            [rng.normal(size=(150, 2)), rng.normal(size=(150, 2)) + [4.0, 0.0]]
        )
        lls = []
        for cap in range(1, 13):
            config = FitConfig(em_max_iter=cap, restarts=1, seed=9)
            lls.append(em_fit(x, 2, "VVV", config).log_likelihood)
        assert np.min(np.diff(lls)) >= -1e-10

    def test_bic_formula(self):
        rng = np.random.default_rng(62)
        x = rng.normal(size=(300, 2))
        result = em_fit(x, 2, "EEE", FitConfig(seed=4))
        expected = 2.0 * result.log_likelihood - result.n_parameters * np.log(300)
        assert_allclose(result.bic, expected, rtol=1e-15)
        assert result.n_parameters == n_parameters("EEE", 2, 2)
        assert result.n_observations == 300

    @pytest.mark.parametrize("model", ["EII", "VII", "EEI", "VVI", "EEE", "VVV"])
    def test_every_model_produces_valid_mixture(self, model):
        rng = np.random.default_rng(63)
        x = np.vstack(
            [rng.normal(size=(80, 2)) * 0.7, rng.normal(size=(80, 2)) + [5.0, 1.0]]
        )
        result = em_fit(x, 2, model, FitConfig(seed=5, restarts=2))
        mixture = result.mixture
        assert mixture.n_components == 2
        assert np.all(mixture.weights > 0)
        assert_allclose(mixture.weights.sum(), 1.0, atol=1e-12)
        for cov in mixture.covariances:
            assert np.all(np.linalg.eigvalsh(cov) > 0)

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(64)
        x = rng.normal(size=(150, 2))
        first = em_fit(x, 2, "VVV", FitConfig(seed=11))
        second = em_fit(x, 2, "VVV", FitConfig(seed=11))
        assert first.log_likelihood == second.log_likelihood
        assert np.array_equal(first.mixture.means, second.mixture.means)
        assert np.array_equal(first.mixture.covariances, second.mixture.covariances)
        assert np.array_equal(first.mixture.weights, second.mixture.weights)

    def test_needs_enough_observations(self):
        rng = np.random.default_rng(65)
        with pytest.raises(ValidationError):
            em_fit(rng.normal(size=(8, 2)), 4, "VVV")

    def test_zero_variance_data(self):
        with pytest.raises(ValidationError):
            em_fit(np.ones((50, 2)), 1, "VVV")

    def test_non_finite_data(self):
        x = np.ones((50, 2))
        x[3, 1] = np.nan
        with pytest.raises(ValidationError):
            em_fit(x, 1, "VVV")

    def test_unfittable_model(self):
        rng = np.random.default_rng(66)
        with pytest.raises((ValidationError, ValueError)):
            em_fit(rng.normal(size=(50, 2)), 1, "EEV")

    def test_all_restarts_failing(self):
        # 9 points cannot give 4 components d+1 effective members each
        rng = np.random.default_rng(59)
        x = rng.normal(size=(9, 2))
        with pytest.raises(FitFailureError, match="restarts failed"):
            em_fit(x, 4, "VVV", FitConfig(seed=0))


class TestSelectModel:
    def test_single_gaussian_bic_consistency(self):
        chosen = []
        for rep in range(20):
            rng = np.random.default_rng(100 + rep)
            x = gaussian_sample(
                rng, 2000, np.array([1.0, -2.0]), np.array([[1.0, 0.3], [0.0, 0.8]])
            )
            config = FitConfig(
                component_range=(1, 2, 3),
                models=("VVV",),
                restarts=1,
                em_tolerance=1e-6,
                em_max_iter=120,
                seed=rep,
            )
            chosen.append(select_model(x, config).n_components)
        assert sum(g == 1 for g in chosen) >= 18

    def test_three_separated_clusters(self):
        rng = np.random.default_rng(55)
        centers = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
        x = np.vstack([c + rng.normal(size=(100, 2)) for c in centers])
        config = FitConfig(
            component_range=(1, 2, 3, 4), models=("VII",), restarts=3, seed=0
        )
        result = select_model(x, config)
        assert result.n_components == 3
        assert result.model == "VII"

    def test_single_candidate_pair(self):
        rng = np.random.default_rng(67)
        x = rng.normal(size=(120, 2))
        config = FitConfig(component_range=(2,), models=("EEE",), seed=1)
        result = select_model(x, config)
        assert result.model == "EEE"
        assert result.n_components == 2
        assert len(result.score_table) == 1

    def test_score_table_covers_all_candidates(self):
        rng = np.random.default_rng(68)
        x = rng.normal(size=(150, 2))
        config = FitConfig(
            component_range=(1, 2), models=("EII", "VVV"), restarts=2, seed=2
        )
        result = select_model(x, config)
        assert len(result.score_table) == 4
        pairs = {(row["model"], row["n_components"]) for row in result.score_table}
        assert pairs == {("EII", 1), ("EII", 2), ("VVV", 1), ("VVV", 2)}
        scored = [row for row in result.score_table if row["error"] is None]
        assert result.bic == max(row["bic"] for row in scored)

    def test_failed_candidates_reported_not_fatal(self):
        # G=5 is infeasible on 11 points but G=1 succeeds
        rng = np.random.default_rng(69)
        x = rng.normal(size=(11, 2))
        config = FitConfig(component_range=(1, 5), models=("VVV",), seed=3)
        result = select_model(x, config)
        assert result.n_components == 1
        errors = {row["n_components"]: row["error"] for row in result.score_table}
        assert errors[1] is None
        assert errors[5] is not None

    def test_exact_tie_resolved_deterministically(self):
        # at G=1 the VVI and EEI constraints coincide, so both candidates
        # score identically and the first listed wins
        rng = np.random.default_rng(56)
        x = rng.normal(size=(400, 2)) * np.array([2.0, 0.5])
        config = FitConfig(component_range=(1,), models=("VVI", "EEI"), seed=1)
        result = select_model(x, config)
        rows = result.score_table
        assert rows[0]["bic"] == rows[1]["bic"]
        assert result.model == "VVI"

    def test_all_candidates_failing(self):
        rng = np.random.default_rng(70)
        x = rng.normal(size=(9, 2))
        config = FitConfig(component_range=(4,), models=("VVV",), seed=0)
        with pytest.raises(FitFailureError):
            select_model(x, config)
