"""Fixed Gaussian mixtures with volume/shape/orientation covariance structure.

A :class:`GaussianMixture` holds a frozen set of parameters ``(weights,
means, covariances)`` together with cached Cholesky factors, precision
matrices and log-determinants, so that densities, posteriors and the
mode-seeking iteration can be evaluated repeatedly without refactorizing.
Covariance matrices can additionally be described through the
eigen-decomposition ``Sigma = volume * U @ diag(shape) @ U.T`` where the
``shape`` diagonal has unit determinant; the fourteen three-letter model
codes (plus ``FREE`` for unconstrained input) name the equal/varying
constraints on those three factors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .errors import NumericalError, ValidationError

__all__ = [
    "ModelName",
    "CovarianceSpec",
    "GaussianMixture",
    "build_covariance",
    "decompose_covariance",
]

_SPEC_ATOL = 1e-10
_INVERSE_ATOL = 1e-8
_WEIGHT_ATOL = 1e-12


class ModelName(str, Enum):
    """Three-letter covariance model codes, plus FREE for unconstrained input.

    The letters constrain volume, shape and orientation in that order:
    E = equal across components, V = varying, I = identity (spherical
    shape / axis-aligned orientation).
    """

    EII = "EII"
    VII = "VII"
    EEI = "EEI"
    VEI = "VEI"
    EVI = "EVI"
    VVI = "VVI"
    EEE = "EEE"
    VEE = "VEE"
    EVE = "EVE"
    VVE = "VVE"
    EEV = "EEV"
    VEV = "VEV"
    EVV = "EVV"
    VVV = "VVV"
    FREE = "FREE"


def _as_matrix(x, name):
    a = np.asarray(x, dtype=float)
    if a.ndim != 2:
        raise ValidationError(f"{name} must be a 2-D array, got ndim={a.ndim}")
    return a


@dataclass(frozen=True)
class CovarianceSpec:
    """Volume/shape/orientation factors of one SPD covariance matrix.

    Parameters
    ----------
    volume : float
        Positive scalar equal to ``det(Sigma) ** (1/d)``.
    shape : ndarray of shape (d,)
        Diagonal of the shape matrix: strictly positive, non-increasing,
        with product equal to 1.
    orientation : ndarray of shape (d, d)
        Orthogonal matrix of eigenvectors (columns).
    """

    volume: float
    shape: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "volume", float(self.volume))
        object.__setattr__(self, "shape", np.asarray(self.shape, dtype=float))
        object.__setattr__(
            self, "orientation", _as_matrix(self.orientation, "orientation")
        )
        if not np.isfinite(self.volume) or self.volume <= 0.0:
            raise ValidationError(f"volume must be positive, got {self.volume}")
        d = self.shape.shape[0]
        if self.shape.ndim != 1 or d == 0:
            raise ValidationError("shape must be a non-empty 1-D array")
        if np.any(self.shape <= 0.0):
            raise ValidationError("shape entries must be strictly positive")
        if np.any(np.diff(self.shape) > 0.0):
            raise ValidationError("shape entries must be non-increasing")
        if abs(np.prod(self.shape) - 1.0) > _SPEC_ATOL:
            raise ValidationError(
                f"shape determinant must be 1, got {np.prod(self.shape)!r}"
            )
        if self.orientation.shape != (d, d):
            raise ValidationError(
                f"orientation must be {d}x{d}, got {self.orientation.shape}"
            )
        gram = self.orientation.T @ self.orientation
        if np.max(np.abs(gram - np.eye(d))) > _SPEC_ATOL:
            raise ValidationError("orientation must be orthogonal")

    @property
    def dim(self) -> int:
        return self.shape.shape[0]


def build_covariance(spec: CovarianceSpec) -> np.ndarray:
    """Assemble the SPD matrix ``volume * U @ diag(shape) @ U.T``.

    The result is symmetrized to remove round-off asymmetry; its
    determinant equals ``volume ** d``.
    """
    u = spec.orientation
    sigma = spec.volume * (u * spec.shape) @ u.T
    return 0.5 * (sigma + sigma.T)


def decompose_covariance(sigma) -> CovarianceSpec:
    """Split an SPD matrix into volume, shape and orientation factors.

    The volume is ``det(sigma) ** (1/d)``, the shape holds the
    eigenvalues divided by the volume in decreasing order, and the
    orientation holds the matching eigenvectors.  Each eigenvector's
    first nonzero coordinate is made positive so the decomposition is
    deterministic; under eigenvalue ties any orthogonal basis of the
    eigenspace may be returned, but reconstruction is always exact to
    round-off.

    Raises
    ------
    NumericalError
        If ``sigma`` is not symmetric positive definite.
    """
    sigma = _as_matrix(sigma, "sigma")
    d = sigma.shape[0]
    if sigma.shape != (d, d) or np.max(np.abs(sigma - sigma.T)) > 1e-8 * (
        1.0 + np.max(np.abs(sigma))
    ):
        raise ValidationError("matrix is not symmetric")
    try:
        linalg.cholesky(sigma, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError("matrix is not positive definite") from exc
    eigvals, eigvecs = linalg.eigh(sigma)
    # stable descending sort keeps eigh's basis under eigenvalue ties
    order = np.argsort(-eigvals, kind="stable")
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    if eigvals[-1] <= 0.0:
        raise NumericalError("matrix is not positive definite")
    # fix each eigenvector's sign by its first non-negligible coordinate
    for j in range(d):
        nz = np.flatnonzero(np.abs(eigvecs[:, j]) > 1e-12)
        if nz.size and eigvecs[nz[0], j] < 0.0:
            eigvecs[:, j] = -eigvecs[:, j]
    volume = float(np.exp(np.mean(np.log(eigvals))))
    return CovarianceSpec(volume=volume, shape=eigvals / volume, orientation=eigvecs)


@dataclass(frozen=True)
class GaussianMixture:
    """A fixed finite mixture of multivariate Gaussians.

    Parameters are validated and frozen at construction time; per
    component the lower Cholesky factor, the precision matrix, the
    precision-weighted mean and the log-determinant are cached.  All
    evaluation methods are pure functions of the stored state, so one
    instance can safely be shared across concurrent workers.

    Parameters
    ----------
    weights : ndarray of shape (G,)
        Mixing proportions, strictly positive and summing to 1.
    means : ndarray of shape (G, d)
        Component mean vectors.
    covariances : ndarray of shape (G, d, d)
        Component covariance matrices, each symmetric positive definite.
    model : ModelName, optional
        Covariance structure the parameters were estimated under;
        ``FREE`` claims no structure.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    model: ModelName = ModelName.FREE
    _chol: np.ndarray = field(init=False, repr=False, compare=False)
    _precisions: np.ndarray = field(init=False, repr=False, compare=False)
    _precision_means: np.ndarray = field(init=False, repr=False, compare=False)
    _log_dets: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        means = np.asarray(self.means, dtype=float)
        covariances = np.asarray(self.covariances, dtype=float)
        model = ModelName(self.model)

        if weights.ndim != 1 or weights.size == 0:
            raise ValidationError("weights must be a non-empty 1-D array")
        g = weights.size
        if means.ndim != 2 or means.shape[0] != g:
            raise ValidationError(
                f"means must have shape (G, d) with G={g}, got {means.shape}"
            )
        d = means.shape[1]
        if covariances.shape != (g, d, d):
            raise ValidationError(
                f"covariances must have shape ({g}, {d}, {d}), "
                f"got {covariances.shape}"
            )
        if np.any(weights <= 0.0):
            raise ValidationError("weights must be strictly positive")
        if abs(weights.sum() - 1.0) > _WEIGHT_ATOL:
            raise ValidationError(
                f"weights must sum to 1 within {_WEIGHT_ATOL}, got {weights.sum()!r}"
            )
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(covariances))):
            raise ValidationError("means and covariances must be finite")

        chol = np.empty_like(covariances)
        precisions = np.empty_like(covariances)
        log_dets = np.empty(g)
        eye = np.eye(d)
        for k in range(g):
            sig = covariances[k]
            if np.max(np.abs(sig - sig.T)) > 1e-8 * (1.0 + np.max(np.abs(sig))):
                raise ValidationError(f"covariances[{k}] is not symmetric")
            try:
                chol[k] = linalg.cholesky(sig, lower=True)
            except linalg.LinAlgError as exc:
                raise NumericalError(
                    f"covariances[{k}] is not positive definite"
                ) from exc
            precisions[k] = linalg.cho_solve((chol[k], True), eye)
            precisions[k] = 0.5 * (precisions[k] + precisions[k].T)
            if np.max(np.abs(sig @ precisions[k] - eye)) > _INVERSE_ATOL:
                raise NumericalError(
                    f"covariances[{k}] is too ill-conditioned to invert reliably"
                )
            log_dets[k] = 2.0 * np.sum(np.log(np.diag(chol[k])))

        for arr in (weights, means, covariances, chol, precisions, log_dets):
            arr.setflags(write=False)
        precision_means = np.einsum("kij,kj->ki", precisions, means)
        precision_means.setflags(write=False)

        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covariances)
        object.__setattr__(self, "model", model)
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_precisions", precisions)
        object.__setattr__(self, "_precision_means", precision_means)
        object.__setattr__(self, "_log_dets", log_dets)

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def n_features(self) -> int:
        return self.means.shape[1]

    @property
    def precisions(self) -> np.ndarray:
        """Cached inverses of the component covariances, shape (G, d, d)."""
        return self._precisions

    @property
    def precision_means(self) -> np.ndarray:
        """Cached products ``inv(Sigma_k) @ mu_k``, shape (G, d)."""
        return self._precision_means

    @property
    def log_dets(self) -> np.ndarray:
        """Cached log-determinants of the component covariances."""
        return self._log_dets

    def _check_points(self, points) -> np.ndarray:
        x = np.asarray(points, dtype=float)
        if x.ndim != 2:
            raise ValidationError(
                f"points must be an (n, d) matrix, got ndim={x.ndim}"
            )
        if x.shape[1] != self.n_features:
            raise ValidationError(
                f"points have dimension {x.shape[1]}, "
                f"mixture has dimension {self.n_features}"
            )
        return x

    def component_log_densities(self, points) -> np.ndarray:
        """Per-component Gaussian log-densities, shape (n, G)."""
        x = self._check_points(points)
        n = x.shape[0]
        d = self.n_features
        out = np.empty((n, self.n_components))
        const = d * np.log(2.0 * np.pi)
        for k in range(self.n_components):
            dev = x - self.means[k]
            sol = linalg.solve_triangular(
                self._chol[k], dev.T, lower=True, check_finite=False
            )
            maha = np.einsum("ij,ij->j", sol, sol)
            out[:, k] = -0.5 * (const + self._log_dets[k] + maha)
        return out

    def weighted_log_densities(self, points) -> np.ndarray:
        """``log(pi_k) + log phi_k(x_i)`` for every point/component pair."""
        return self.component_log_densities(points) + np.log(self.weights)

    def log_density(self, points) -> np.ndarray:
        """Mixture log-density at each row of ``points``.

        Computed with the log-sum-exp technique, so the result stays
        finite for any finite input, however far into the tails.
        """
        return logsumexp(self.weighted_log_densities(points), axis=1)

    def component_posteriors(self, points) -> np.ndarray:
        """Posterior component probabilities ``z[i, k]``, shape (n, G).

        Rows are computed as exponentials of centered log terms and
        renormalized, so they sum to 1 even in regions where the raw
        densities underflow.  Entries may underflow to exactly 0 for
        points extremely far from a component; at least one entry per
        row is always positive.
        """
        lw = self.weighted_log_densities(points)
        lw -= logsumexp(lw, axis=1, keepdims=True)
        z = np.exp(lw)
        z /= z.sum(axis=1, keepdims=True)
        return z

    def map_component_labels(self, points) -> np.ndarray:
        """Index of the maximum-posterior component per point; ties break low."""
        return np.argmax(self.weighted_log_densities(points), axis=1)

    def marginal_moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of the mixture as a whole.

        Returns ``mu = sum_k pi_k mu_k`` and
        ``Sigma = sum_k pi_k Sigma_k + sum_k pi_k (mu_k - mu)(mu_k - mu)^T``.
        """
        mu = self.weights @ self.means
        dev = self.means - mu
        sigma = np.einsum("k,kij->ij", self.weights, self.covariances)
        sigma = sigma + (dev.T * self.weights) @ dev
        return mu, 0.5 * (sigma + sigma.T)
