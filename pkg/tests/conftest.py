"""Shared generators for randomized tests (imported by test modules)."""

import numpy as np

from mixmodes import GaussianMixture


def random_spd(rng, d, lo=0.5, hi=2.0):
    """SPD matrix with eigenvalues in [lo, hi] and random orientation."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.sign(np.diag(r))
    return (q * rng.uniform(lo, hi, size=d)) @ q.T


def random_mixture(rng, d, g, mean_scale=3.0):
    weights = 0.5 + rng.random(g)
    weights /= weights.sum()
    means = rng.standard_normal((g, d)) * mean_scale
    covs = np.stack([random_spd(rng, d) for _ in range(g)])
    return GaussianMixture(weights, means, covs)
