"""Hill-climbing iteration that drives points to the modes of a mixture density.

Every starting point is iterated simultaneously.  One iteration computes
the posterior component probabilities of the current positions, solves
the weighted-precision linear system for the proposed positions, and
blends proposal and previous position through an exponential step-size
schedule.  The per-point systems share one assembly pass over the
mixture components; the solves are independent d x d symmetric
positive-definite solves, so the iteration is data-parallel over points
and deterministic regardless of worker count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import NumericalError, ValidationError
from .mixture import GaussianMixture

__all__ = [
    "MemConfig",
    "MemResult",
    "damping_weight",
    "m_step_reference",
    "m_step_batched",
    "mem_step",
    "run_mem",
    "log_density_gradient",
]

_ROW_SUM_ATOL = 1e-12


@dataclass(frozen=True)
class MemConfig:
    """Settings for the mode-seeking iteration.

    Parameters
    ----------
    tolerance : float
        Relative per-coordinate change below which a point is frozen.
    max_iterations : int
        Global iteration cap; hitting it flags non-convergence instead
        of raising.
    damping_enabled : bool
        Apply the step-size schedule ``1 - exp(-damping_rate * t)``.
    damping_rate : float
        Rate of the schedule; larger means full steps sooner.
    record_paths : bool
        Keep a snapshot of all positions after every iteration.
    m_step_impl : str
        ``"batched"`` assembles all per-point systems in one pass;
        ``"loop"`` solves point by point and exists as the slow
        reference baseline.
    """

    tolerance: float = 1e-5
    max_iterations: int = 1000
    damping_enabled: bool = True
    damping_rate: float = 0.1
    record_paths: bool = False
    m_step_impl: str = "batched"

    def __post_init__(self):
        if not self.tolerance > 0.0:
            raise ValidationError("tolerance must be positive")
        if not self.damping_rate > 0.0:
            raise ValidationError("damping_rate must be positive")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be at least 1")
        if self.m_step_impl not in ("batched", "loop"):
            raise ValidationError(
                f"m_step_impl must be 'batched' or 'loop', got {self.m_step_impl!r}"
            )


@dataclass(frozen=True)
class MemResult:
    """Outcome of :func:`run_mem`.

    Attributes
    ----------
    converged_points : ndarray of shape (n, d)
        Final position of every starting point.
    iterations : int
        Global iteration count at termination.
    per_point_converged_at : ndarray of shape (n,)
        Iteration at which each point was frozen; -1 if it never met
        the stopping criterion.
    converged : bool
        True when every point was frozen before the iteration cap.
    unconverged_indices : ndarray
        Indices of points still active when the loop stopped.
    final_log_density : ndarray of shape (n,)
        Mixture log-density at the final positions.
    paths : list of ndarray or None
        When recorded, ``paths[t]`` is the full position matrix after
        iteration ``t`` (``paths[0]`` is the starting matrix).
    """

    converged_points: np.ndarray
    iterations: int
    per_point_converged_at: np.ndarray
    converged: bool
    unconverged_indices: np.ndarray
    final_log_density: np.ndarray
    paths: list[np.ndarray] | None = field(default=None, repr=False)


def _check_responsibilities(z, n_components) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or z.shape[1] != n_components:
        raise ValidationError(
            f"responsibilities must have shape (n, {n_components}), got {z.shape}"
        )
    if np.any(z < 0.0):
        raise ValidationError("responsibilities must be non-negative")
    bad = np.abs(z.sum(axis=1) - 1.0) > _ROW_SUM_ATOL
    if np.any(bad):
        i = int(np.argmax(bad))
        raise ValidationError(
            f"responsibility row {i} sums to {z[i].sum()!r}, expected 1"
        )
    return z


def damping_weight(t: int, rate: float = 0.1) -> float:
    """Step size ``1 - exp(-rate * t)`` for iteration ``t >= 1``.

    Strictly increasing in ``t`` and approaching 1, so early iterations
    take small steps and later ones essentially accept the proposal.
    """
    if t < 1:
        raise ValidationError("iteration index must be at least 1")
    if not rate > 0.0:
        raise ValidationError("rate must be positive")
    return 1.0 - np.exp(-rate * t)


def m_step_reference(mixture: GaussianMixture, z_row) -> np.ndarray:
    """Closed-form maximizer of the weighted log-density surrogate, one point.

    Solves ``(sum_k z_k P_k) x = sum_k z_k P_k mu_k`` where ``P_k`` is
    the precision of component ``k``, via a Cholesky factorization of
    the accumulated matrix (never an explicit inverse).  Entries of
    ``z_row`` may have underflowed to 0 as long as at least one is
    positive.
    """
    z = _check_responsibilities(np.asarray(z_row, float)[None, :], mixture.n_components)[0]
    mat = np.einsum("k,kij->ij", z, mixture.precisions)
    rhs = z @ mixture.precision_means
    try:
        factor = linalg.cho_factor(mat, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NumericalError(
            "accumulated precision matrix is not positive definite; "
            "responsibilities or covariances are corrupted"
        ) from exc
    return linalg.cho_solve(factor, rhs, check_finite=False)


def _solve_spd_stack(mats: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``mats[i] @ x[i] = rhs[i]`` for a stack of small SPD systems.

    Factors the whole stack with one batched Cholesky call, then runs
    the two triangular substitutions vectorized over the batch (d is
    small, so the coordinate loop costs d^2 array operations).
    """
    try:
        chol = np.linalg.cholesky(mats)
    except np.linalg.LinAlgError:
        for i in range(mats.shape[0]):
            try:
                np.linalg.cholesky(mats[i])
            except np.linalg.LinAlgError:
                raise NumericalError(
                    f"accumulated precision matrix for row {i} is not positive "
                    "definite; responsibilities or covariances are corrupted"
                ) from None
        raise NumericalError("batched Cholesky factorization failed") from None
    d = mats.shape[-1]
    y = np.empty_like(rhs)
    for j in range(d):
        acc = rhs[:, j].copy()
        for m in range(j):
            acc -= chol[:, j, m] * y[:, m]
        y[:, j] = acc / chol[:, j, j]
    x = np.empty_like(rhs)
    for j in range(d - 1, -1, -1):
        acc = y[:, j].copy()
        for m in range(j + 1, d):
            acc -= chol[:, m, j] * x[:, m]
        x[:, j] = acc / chol[:, j, j]
    return x


def m_step_batched(mixture: GaussianMixture, z) -> np.ndarray:
    """Closed-form maximizer for every row of a responsibility matrix.

    The per-point coefficient blocks ``sum_k z[i, k] P_k`` and right
    hand sides ``sum_k z[i, k] P_k mu_k`` are accumulated in a single
    pass over the components, then the n independent d x d SPD systems
    are solved in a batch.  Row ``i`` of the result equals
    ``m_step_reference(mixture, z[i])`` to solver round-off.
    """
    z = _check_responsibilities(z, mixture.n_components)
    mats = np.einsum("nk,kij->nij", z, mixture.precisions)
    rhs = z @ mixture.precision_means
    return _solve_spd_stack(mats, rhs)


def mem_step(mixture: GaussianMixture, points, t: int, config: MemConfig) -> np.ndarray:
    """One global iteration: posteriors, proposal, damped update.

    Returns ``(1 - w) * x + w * x_star`` with ``w`` from
    :func:`damping_weight` at iteration ``t`` (or 1 with damping
    disabled).  The blend is a convex step toward the maximizer of a
    concave surrogate, so the mixture log-density never decreases.
    """
    if t < 1:
        raise ValidationError("iteration index must be at least 1")
    x = mixture._check_points(points)
    z = mixture.component_posteriors(x)
    if config.m_step_impl == "loop":
        proposal = np.empty_like(x)
        for i in range(x.shape[0]):
            proposal[i] = m_step_reference(mixture, z[i])
    else:
        proposal = m_step_batched(mixture, z)
    if config.damping_enabled:
        w = damping_weight(t, config.damping_rate)
        return x + w * (proposal - x)
    return proposal


def run_mem(mixture: GaussianMixture, start_points, config: MemConfig | None = None) -> MemResult:
    """Drive every starting point uphill until it stops moving.

    A point is frozen once its element-wise relative change
    ``max_j |x_j' - x_j| / (1 + |x_j|)`` drops below the tolerance;
    frozen points are excluded from further solves.  The loop ends when
    all points are frozen or the iteration cap is reached, in which
    case the result carries a non-convergence flag with the offending
    indices instead of raising.
    """
    if config is None:
        config = MemConfig()
    x = mixture._check_points(start_points).copy()
    if not np.all(np.isfinite(x)):
        raise ValidationError("starting points must be finite")
    n = x.shape[0]
    converged_at = np.full(n, -1, dtype=int)
    active = np.arange(n)
    paths = [x.copy()] if config.record_paths else None

    t = 0
    while active.size and t < config.max_iterations:
        t += 1
        previous = x[active]
        updated = mem_step(mixture, previous, t, config)
        x[active] = updated
        rel = np.max(np.abs(updated - previous) / (1.0 + np.abs(previous)), axis=1)
        frozen = rel < config.tolerance
        converged_at[active[frozen]] = t
        active = active[~frozen]
        if config.record_paths:
            paths.append(x.copy())

    x.setflags(write=False)
    converged_at.setflags(write=False)
    return MemResult(
        converged_points=x,
        iterations=t,
        per_point_converged_at=converged_at,
        converged=active.size == 0,
        unconverged_indices=active,
        final_log_density=mixture.log_density(x),
        paths=paths,
    )


def log_density_gradient(mixture: GaussianMixture, x) -> np.ndarray:
    """Gradient of the mixture log-density at a single point.

    Equals ``sum_k z_k(x) P_k (mu_k - x)`` with posteriors evaluated at
    ``x``; zero exactly at modes, saddles and local minima.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != mixture.n_features:
        raise ValidationError(
            f"x must be a length-{mixture.n_features} vector, got shape {x.shape}"
        )
    z = mixture.component_posteriors(x[None, :])[0]
    mat = np.einsum("k,kij->ij", z, mixture.precisions)
    return z @ mixture.precision_means - mat @ x
