"""Maximum-likelihood fitting of Gaussian mixtures with BIC selection.

Covers the six covariance structures whose M-step is closed form
(spherical EII/VII, diagonal EEI/VVI, pooled full EEE, per-component
full VVV).  Mixtures with rotation-coupled constraints can still be
consumed downstream when built elsewhere; they are just not fitted
here.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from .errors import FitFailureError, ValidationError
from .mixture import GaussianMixture, ModelName

__all__ = [
    "SUPPORTED_MODELS",
    "FitConfig",
    "FitResult",
    "n_parameters",
    "em_fit",
    "select_model",
]

SUPPORTED_MODELS = ("EII", "VII", "EEI", "VVI", "EEE", "VVV")

_COV_PARAM_COUNTS = {
    "EII": lambda g, d: 1,
    "VII": lambda g, d: g,
    "EEI": lambda g, d: d,
    "VVI": lambda g, d: g * d,
    "EEE": lambda g, d: d * (d + 1) // 2,
    "VVV": lambda g, d: g * d * (d + 1) // 2,
}


def n_parameters(model: str, n_components: int, n_features: int) -> int:
    """Free parameter count: weights + means + constrained covariances."""
    model = str(ModelName(model).value) if isinstance(model, ModelName) else str(model)
    if model not in _COV_PARAM_COUNTS:
        raise ValidationError(
            f"model {model!r} is not fittable; supported: {SUPPORTED_MODELS}"
        )
    g, d = int(n_components), int(n_features)
    if g < 1 or d < 1:
        raise ValidationError("n_components and n_features must be >= 1")
    return (g - 1) + g * d + _COV_PARAM_COUNTS[model](g, d)


@dataclass(frozen=True)
class FitConfig:
    """Settings for EM fitting and model selection.

    Parameters
    ----------
    component_range : tuple of int
        Candidate numbers of components, each >= 1.
    models : tuple of str
        Candidate covariance structures, a subset of
        ``SUPPORTED_MODELS``.
    em_tolerance : float
        Relative log-likelihood change that stops EM,
        ``|ll' - ll| / (1 + |ll'|) < em_tolerance``.
    em_max_iter : int
        Iteration cap per EM run.
    restarts : int
        Independent k-means++ starts per (model, G) pair; the best
        final log-likelihood wins.
    seed : int or None
        Seeds every restart deterministically; None draws fresh
        entropy.
    """

    component_range: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8, 9)
    models: tuple[str, ...] = SUPPORTED_MODELS
    em_tolerance: float = 1e-8
    em_max_iter: int = 500
    restarts: int = 5
    seed: int | None = None

    def __post_init__(self):
        comps = tuple(int(g) for g in self.component_range)
        if len(comps) == 0 or min(comps) < 1:
            raise ValidationError("component_range must be non-empty with all G >= 1")
        models = tuple(str(ModelName(m).value) for m in self.models)
        bad = [m for m in models if m not in SUPPORTED_MODELS]
        if len(models) == 0 or bad:
            raise ValidationError(
                f"models must be a non-empty subset of {SUPPORTED_MODELS}, got {bad or models}"
            )
        if not self.em_tolerance > 0.0:
            raise ValidationError("em_tolerance must be positive")
        if self.em_max_iter < 1 or self.restarts < 1:
            raise ValidationError("em_max_iter and restarts must be >= 1")
        object.__setattr__(self, "component_range", comps)
        object.__setattr__(self, "models", models)


@dataclass(frozen=True)
class FitResult:
    """One fitted mixture plus its selection score.

    ``bic = 2 * log_likelihood - n_parameters * log(n)``; larger is
    better.  ``score_table`` is populated by :func:`select_model` with
    one row per candidate (model, G) pair, including failures.
    """

    mixture: GaussianMixture
    model: str
    n_components: int
    n_observations: int
    log_likelihood: float
    n_parameters: int
    bic: float
    converged: bool
    n_iter: int
    score_table: tuple[dict, ...] | None = None


def _check_data(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValidationError("data must be an (n, d) matrix with n >= 2")
    if not np.all(np.isfinite(x)):
        raise ValidationError("data contains non-finite values")
    return x


def _kmeanspp_means(x: np.ndarray, g: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread starting means, no Lloyd refinement."""
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    d_sq = np.sum((x - x[chosen[0]]) ** 2, axis=1)
    for _ in range(1, g):
        total = d_sq.sum()
        if total > 0.0:
            idx = int(rng.choice(n, p=d_sq / total))
        else:
            idx = int(rng.integers(n))
        chosen.append(idx)
        d_sq = np.minimum(d_sq, np.sum((x - x[idx]) ** 2, axis=1))
    return x[chosen].copy()


def _floor_full(cov: np.ndarray, floor: float) -> np.ndarray:
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals[0] >= floor:
        return cov
    eigvals = np.maximum(eigvals, floor)
    floored = (eigvecs * eigvals) @ eigvecs.T
    return 0.5 * (floored + floored.T)


def _m_step(x, z, model, floor):
    """Weighted MLE under the covariance constraint; closed form for all six."""
    n, d = x.shape
    nk = z.sum(axis=0)
    if np.any(nk < d + 1):
        k = int(np.argmin(nk))
        raise FitFailureError(
            f"component {k} collapsed to {nk[k]:.2f} effective points (need >= {d + 1})"
        )
    weights = nk / n
    means = (z.T @ x) / nk[:, None]
    dev = x[:, None, :] - means[None, :, :]
    if model in ("VVV", "EEE"):
        scatter = np.einsum("nk,nki,nkj->kij", z, dev, dev)
        if model == "VVV":
            covs = scatter / nk[:, None, None]
        else:
            covs = np.broadcast_to(scatter.sum(axis=0) / n, (len(nk), d, d))
        covs = np.stack([_floor_full(c, floor) for c in covs])
    else:
        diag = np.einsum("nk,nki->ki", z, dev ** 2)
        if model == "VVI":
            var = diag / nk[:, None]
        elif model == "EEI":
            var = np.broadcast_to(diag.sum(axis=0) / n, (len(nk), d)).copy()
        elif model == "VII":
            var = np.repeat((diag.sum(axis=1) / (d * nk))[:, None], d, axis=1)
        else:  # EII
            var = np.full((len(nk), d), diag.sum() / (d * n))
        var = np.maximum(var, floor)
        covs = var[:, :, None] * np.eye(d)
    return weights, means, covs


def _run_single_em(x, g, model, config, rng, floor):
    n = x.shape[0]
    means = _kmeanspp_means(x, g, rng)
    d_sq = np.sum((x[:, None, :] - means[None, :, :]) ** 2, axis=2)
    z = np.zeros((n, g))
    z[np.arange(n), d_sq.argmin(axis=1)] = 1.0

    weights, means, covs = _m_step(x, z, model, floor)
    mixture = GaussianMixture(weights, means, covs, model=model)
    prev_ll = -np.inf
    converged = False
    n_iter = 0
    for _ in range(config.em_max_iter):
        log_weighted = mixture.weighted_log_densities(x)
        log_norm = logsumexp(log_weighted, axis=1)
        ll = float(log_norm.sum())
        if abs(ll - prev_ll) / (1.0 + abs(ll)) < config.em_tolerance:
            converged = True
            break
        prev_ll = ll
        z = np.exp(log_weighted - log_norm[:, None])
        weights, means, covs = _m_step(x, z, model, floor)
        mixture = GaussianMixture(weights, means, covs, model=model)
        n_iter += 1
    else:
        ll = float(logsumexp(mixture.weighted_log_densities(x), axis=1).sum())
    return mixture, ll, converged, n_iter


def em_fit(x, n_components: int, model: str, config: FitConfig | None = None) -> FitResult:
    """Fit one (model, G) pair by restarted EM.

    Runs ``config.restarts`` independent k-means++ initializations and
    keeps the final parameters with the highest log-likelihood.  A
    restart whose smallest component drops below ``d + 1`` effective
    points is abandoned; the fit fails only when every restart does.
    """
    x = _check_data(x)
    config = config or FitConfig()
    g = int(n_components)
    model = str(ModelName(model).value)
    if model not in SUPPORTED_MODELS:
        raise ValidationError(
            f"model {model!r} is not fittable; supported: {SUPPORTED_MODELS}"
        )
    n, d = x.shape
    if g < 1:
        raise ValidationError("n_components must be >= 1")
    if n <= g * d:
        raise ValidationError(f"need n > G*d observations, got n={n}, G={g}, d={d}")

    sample_cov = np.atleast_2d(np.cov(x, rowvar=False))
    floor = 1e-8 * float(np.trace(sample_cov)) / d
    if floor <= 0.0:
        raise ValidationError("data has zero total variance")

    seed_seq = np.random.SeedSequence(
        entropy=config.seed, spawn_key=(g, SUPPORTED_MODELS.index(model))
    )
    best = None
    failures: list[str] = []
    for child in seed_seq.spawn(config.restarts):
        rng = np.random.Generator(np.random.PCG64(child))
        try:
            mixture, ll, converged, n_iter = _run_single_em(x, g, model, config, rng, floor)
        except FitFailureError as exc:
            failures.append(str(exc))
            continue
        if best is None or ll > best[1]:
            best = (mixture, ll, converged, n_iter)
    if best is None:
        raise FitFailureError(
            f"all {config.restarts} restarts failed for model={model}, G={g}: {failures[-1]}"
        )
    mixture, ll, converged, n_iter = best
    p = n_parameters(model, g, d)
    return FitResult(
        mixture=mixture,
        model=model,
        n_components=g,
        n_observations=n,
        log_likelihood=ll,
        n_parameters=p,
        bic=2.0 * ll - p * np.log(n),
        converged=converged,
        n_iter=n_iter,
    )


def select_model(x, config: FitConfig | None = None) -> FitResult:
    """Fit every (model, G) candidate and return the best BIC.

    Ties are broken toward fewer parameters, then fewer components.
    The returned result carries ``score_table`` with one row per
    candidate; failed fits appear with an ``error`` message instead of
    scores.
    """
    x = _check_data(x)
    config = config or FitConfig()
    table: list[dict] = []
    results: list[FitResult] = []
    for g in sorted(set(config.component_range)):
        for model in config.models:
            try:
                res = em_fit(x, g, model, config)
            except (FitFailureError, ValidationError) as exc:
                table.append(
                    dict(model=model, n_components=g, log_likelihood=None,
                         n_parameters=None, bic=None, converged=None, error=str(exc))
                )
                continue
            table.append(
                dict(model=model, n_components=g, log_likelihood=res.log_likelihood,
                     n_parameters=res.n_parameters, bic=res.bic,
                     converged=res.converged, error=None)
            )
            results.append(res)
    if not results:
        raise FitFailureError("every candidate (model, G) pair failed to fit")
    best = max(results, key=lambda r: (r.bic, -r.n_parameters, -r.n_components))
    return replace(best, score_table=tuple(table))
