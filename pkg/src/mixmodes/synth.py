"""Synthetic data generators used by the CLI and the test suite."""

from __future__ import annotations

import numpy as np
from scipy import linalg

from .errors import ValidationError
from .mixture import GaussianMixture

__all__ = [
    "sample_skew_normal",
    "sample_gauss_skewnormal",
    "sample_separated_gaussians",
    "GENERATORS",
]


def sample_skew_normal(n, location, scale, shape, rng) -> np.ndarray:
    """Draw from a multivariate skew-normal distribution.

    Uses the hidden-truncation stochastic representation: with
    ``delta = corr(scale) @ shape / sqrt(1 + shape' corr(scale) shape)``,
    draw ``(w0, w)`` jointly normal with ``corr = [[1, delta'],
    [delta, corr(scale)]]`` and reflect ``w`` through the sign of
    ``w0``; the result is rescaled by the scale diagonal and shifted by
    the location.

    Parameters
    ----------
    n : int
        Number of draws.
    location : ndarray of shape (d,)
    scale : ndarray of shape (d, d)
        Symmetric positive definite scale matrix.
    shape : ndarray of shape (d,)
        Slant vector; zero recovers the normal distribution.
    rng : numpy.random.Generator
    """
    location = np.asarray(location, dtype=float)
    scale = np.asarray(scale, dtype=float)
    shape = np.asarray(shape, dtype=float)
    d = location.size
    if scale.shape != (d, d) or shape.shape != (d,):
        raise ValidationError("location, scale and shape dimensions disagree")
    omega = np.sqrt(np.diag(scale))
    if np.any(omega <= 0.0):
        raise ValidationError("scale matrix needs a positive diagonal")
    corr = scale / np.outer(omega, omega)
    delta = corr @ shape / np.sqrt(1.0 + shape @ corr @ shape)
    joint = np.empty((d + 1, d + 1))
    joint[0, 0] = 1.0
    joint[0, 1:] = delta
    joint[1:, 0] = delta
    joint[1:, 1:] = corr
    chol = linalg.cholesky(joint, lower=True)
    w = rng.standard_normal((n, d + 1)) @ chol.T
    z = np.sign(w[:, :1]) * w[:, 1:]
    return location + z * omega


def sample_gauss_skewnormal(n: int, seed=None):
    """Two-component benchmark sample: a Gaussian bump plus a skewed one.

    One third of the points come from N([5, -2], I), the rest from a
    skew-normal at the origin with scale [[1, 0.5], [0.5, 1]] and slant
    [5, 1].  Returns ``(x, labels)`` with label 0 for the Gaussian
    component.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    rng = np.random.default_rng(seed)
    labels = (rng.random(n) >= 1.0 / 3.0).astype(int)
    x = np.empty((n, 2))
    n0 = int(np.sum(labels == 0))
    x[labels == 0] = np.array([5.0, -2.0]) + rng.standard_normal((n0, 2))
    x[labels == 1] = sample_skew_normal(
        n - n0,
        location=[0.0, 0.0],
        scale=[[1.0, 0.5], [0.5, 1.0]],
        shape=[5.0, 1.0],
        rng=rng,
    )
    return x, labels


def _random_spd(d: int, rng: np.random.Generator) -> np.ndarray:
    """SPD matrix with eigenvalues in [0.5, 2] and random orientation."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.sign(np.diag(r))
    eigvals = rng.uniform(0.5, 2.0, size=d)
    return (q * eigvals) @ q.T


def sample_separated_gaussians(n: int, n_components: int, n_features: int,
                               separation: float = 10.0, seed=None):
    """Sample from a Gaussian mixture built to have one mode per component.

    Component means are rescaled so the smallest pairwise distance is
    ``separation`` times the largest within-component standard
    deviation; weights are bounded below by ``1 / (3 G)``.  Returns
    ``(x, labels, mixture)``.
    """
    if n < 1 or n_components < 1 or n_features < 1:
        raise ValidationError("n, n_components and n_features must be >= 1")
    if not separation > 0.0:
        raise ValidationError("separation must be positive")
    rng = np.random.default_rng(seed)
    g, d = int(n_components), int(n_features)

    weights = 0.5 + rng.random(g)
    weights /= weights.sum()
    covs = np.stack([_random_spd(d, rng) for _ in range(g)])
    max_sd = float(np.sqrt(max(np.linalg.eigvalsh(c)[-1] for c in covs)))

    if g == 1:
        means = rng.standard_normal((1, d))
    else:
        while True:
            means = rng.standard_normal((g, d))
            diff = means[:, None, :] - means[None, :, :]
            dist = np.sqrt(np.einsum("abj,abj->ab", diff, diff))
            dist[np.diag_indices(g)] = np.inf
            if dist.min() > 1e-3:
                break
        means *= separation * max_sd / dist.min()

    mixture = GaussianMixture(weights, means, covs)
    labels = rng.choice(g, size=n, p=weights)
    x = np.empty((n, d))
    for k in range(g):
        mask = labels == k
        chol = linalg.cholesky(covs[k], lower=True)
        x[mask] = means[k] + rng.standard_normal((int(mask.sum()), d)) @ chol.T
    return x, labels, mixture


GENERATORS = {
    "gauss-skewnormal": sample_gauss_skewnormal,
    "separated-gaussians": sample_separated_gaussians,
}
