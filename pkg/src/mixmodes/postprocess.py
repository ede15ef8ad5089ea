"""Turn converged hill-climbing output into a modal clustering partition.

Converged points that belong to the same mode differ only by numerical
tolerance, so they form tight clusters: connected components of the
graph that links points closer than a merge tolerance.  Each component
is collapsed to its mean, low-density modes can then be dropped against
a uniform-noise level ``1/V`` over the data region, and orphaned points
are reassigned to the nearest surviving mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import gammaln
from scipy.stats import chi2

from .errors import DegenerateDataError, NumericalError, ValidationError
from .mixture import GaussianMixture
from .modal_em import MemConfig, run_mem

__all__ = [
    "ModeSet",
    "VolumeEstimate",
    "ModalPartition",
    "GridPartition",
    "merge_tight_clusters",
    "log_volume_data_box",
    "log_volume_pca_box",
    "log_volume_gaussian_ellipsoid",
    "min_log_volume",
    "density_threshold",
    "partition_without_denoising",
    "denoise_modes",
    "default_merge_tolerance",
    "modal_cluster",
    "attraction_partition_grid",
]

DENOISE_METHODS = ("none", "gaussian", "databox", "pcabox", "min")


class _UnionFind:
    """Array-based disjoint sets with path halving and union by size."""

    def __init__(self, n: int):
        self.parent = np.arange(n)
        self.size = np.ones(n, dtype=int)

    def find(self, i: int) -> int:
        parent = self.parent
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return int(i)

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]


@dataclass(frozen=True)
class ModeSet:
    """Merged modes and the mapping from input points to them.

    Attributes
    ----------
    modes : ndarray of shape (M, d)
        One location per tight cluster, the mean of its members.
    assignment : ndarray of shape (n,)
        Mode index (0-based) of every input point; every mode has at
        least one member.
    merge_tol : float
        Tolerance the clusters were merged under.  When the input
        really was a set of tight clusters (diameters well under the
        tolerance), pairwise mode distances all exceed it; arbitrary
        point sets carry no such guarantee.
    mode_log_density : ndarray of shape (M,) or None
        Mixture log-density at each mode, when a mixture was supplied.
    """

    modes: np.ndarray
    assignment: np.ndarray
    merge_tol: float
    mode_log_density: np.ndarray | None = None

    def __post_init__(self):
        modes = np.asarray(self.modes, dtype=float)
        assignment = np.asarray(self.assignment, dtype=int)
        if modes.ndim != 2 or modes.shape[0] == 0:
            raise ValidationError("modes must be a non-empty (M, d) matrix")
        m = modes.shape[0]
        if assignment.ndim != 1 or assignment.size == 0:
            raise ValidationError("assignment must be a non-empty 1-D array")
        if assignment.min() < 0 or assignment.max() >= m:
            raise ValidationError("assignment indices must lie in [0, M)")
        if np.bincount(assignment, minlength=m).min() == 0:
            raise ValidationError("every mode must have at least one member")
        if self.mode_log_density is not None:
            mld = np.asarray(self.mode_log_density, dtype=float)
            if mld.shape != (m,):
                raise ValidationError("mode_log_density must have shape (M,)")
            object.__setattr__(self, "mode_log_density", mld)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "assignment", assignment)

    @property
    def n_modes(self) -> int:
        return self.modes.shape[0]


def _connected_components(points: np.ndarray, tol: float) -> np.ndarray:
    """Exact connected components of the distance-``tol`` graph.

    Points are first grouped into axis-aligned cells of side
    ``tol / (2 sqrt(d))``; any two points in one cell are at most
    ``tol / 2`` apart, so a cell is always one connected clump.  Cells
    are then joined through union-find whenever some cross pair of
    members lies within ``tol``; candidate cell pairs are pre-filtered
    by their member-mean distance (a pair of linked members bounds the
    mean distance by ``2 tol``).  This keeps the Python-level union
    loop proportional to the number of cell pairs instead of the number
    of point pairs.
    """
    n, d = points.shape
    quantum = tol / (2.0 * np.sqrt(d))
    cells, cell_of = np.unique(
        np.floor(points / quantum).astype(np.int64), axis=0, return_inverse=True
    )
    cell_of = cell_of.reshape(-1)
    n_cells = cells.shape[0]
    if n_cells == 1:
        return np.zeros(n, dtype=int)

    counts = np.bincount(cell_of, minlength=n_cells)
    order = np.argsort(cell_of, kind="stable")
    offsets = np.concatenate([[0], np.cumsum(counts)])
    members = [order[offsets[i] : offsets[i + 1]] for i in range(n_cells)]
    centers = np.zeros((n_cells, d))
    np.add.at(centers, cell_of, points)
    centers /= counts[:, None]

    uf = _UnionFind(n_cells)
    tol_sq = tol * tol
    candidate_sq = (2.0 * tol) ** 2
    block = max(1, int(4_000_000 // max(n_cells, 1)))
    for start in range(0, n_cells, block):
        stop = min(start + block, n_cells)
        diff = centers[start:stop, None, :] - centers[None, start:, :]
        center_sq = np.einsum("abj,abj->ab", diff, diff)
        rows, cols = np.nonzero(center_sq <= candidate_sq)
        for r, c in zip(rows.tolist(), cols.tolist()):
            a, b = start + r, start + c
            if b <= a or uf.find(a) == uf.find(b):
                continue
            pa = points[members[a]]
            pb = points[members[b]]
            cross = pa[:, None, :] - pb[None, :, :]
            if np.min(np.einsum("abj,abj->ab", cross, cross)) <= tol_sq:
                uf.union(a, b)

    cell_root = np.fromiter((uf.find(i) for i in range(n_cells)), dtype=int, count=n_cells)
    return cell_root[cell_of]


def merge_tight_clusters(points, merge_tol: float, mixture: GaussianMixture | None = None) -> ModeSet:
    """Collapse numerically-distinct converged points into modes.

    Two points are linked when their Euclidean distance is at most
    ``merge_tol``; connected components of that graph become modes,
    located at the member mean.  Components are numbered by first
    point occurrence, so the labeling is deterministic.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValidationError("points must be a non-empty (n, d) matrix")
    if not merge_tol > 0.0:
        raise ValidationError("merge_tol must be positive")
    roots = _connected_components(points, float(merge_tol))
    _, first_index, assignment = np.unique(roots, return_index=True, return_inverse=True)
    relabel = np.argsort(np.argsort(first_index))
    assignment = relabel[assignment.reshape(-1)]
    m = first_index.size
    counts = np.bincount(assignment, minlength=m)
    modes = np.zeros((m, points.shape[1]))
    np.add.at(modes, assignment, points)
    modes /= counts[:, None]
    mld = mixture.log_density(modes) if mixture is not None else None
    return ModeSet(modes=modes, assignment=assignment, merge_tol=float(merge_tol), mode_log_density=mld)


@dataclass(frozen=True)
class VolumeEstimate:
    """Log-hypervolume of the data region, with the estimator that produced it."""

    log_volume: float
    method: str
    alpha: float | None = None

    def __post_init__(self):
        if self.method not in ("data_box", "pca_box", "gaussian_ellipsoid"):
            raise ValidationError(f"unknown volume method {self.method!r}")
        if not np.isfinite(self.log_volume):
            raise ValidationError("log_volume must be finite")


def _box_log_volume(x: np.ndarray) -> float:
    ranges = x.max(axis=0) - x.min(axis=0)
    if np.any(ranges <= 0.0):
        j = int(np.argmax(ranges <= 0.0))
        raise DegenerateDataError(f"coordinate {j} has zero range")
    return float(np.sum(np.log(ranges)))


def log_volume_data_box(x) -> VolumeEstimate:
    """Volume of the axis-aligned box spanned by the data."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValidationError("need an (n, d) matrix with n >= 2")
    return VolumeEstimate(log_volume=_box_log_volume(x), method="data_box")


def log_volume_pca_box(x) -> VolumeEstimate:
    """Volume of the box spanned by the principal component scores."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValidationError("need an (n, d) matrix with n >= 2")
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    eigvals, eigvecs = linalg.eigh(cov)
    if eigvals[0] <= 1e-12 * max(eigvals[-1], 1e-300):
        raise DegenerateDataError("sample covariance is rank deficient")
    scores = (x - x.mean(axis=0)) @ eigvecs
    return VolumeEstimate(log_volume=_box_log_volume(scores), method="pca_box")


def log_volume_gaussian_ellipsoid(mixture: GaussianMixture, alpha: float = 0.01) -> VolumeEstimate:
    """Volume of the central ``(1 - alpha)`` region of a Gaussian proxy.

    Uses the ellipsoid of the Gaussian with the mixture's marginal
    covariance ``Sigma``:

        log V = log 2 + (d/2) log pi - log d - log Gamma(d/2)
                + (d/2) log q + (1/2) log |Sigma|

    where ``q`` is the ``(1 - alpha)`` quantile of a chi-squared
    distribution with d degrees of freedom.
    """
    if not (isinstance(alpha, (int, float)) and 0.0 < alpha < 1.0):
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha!r}")
    d = mixture.n_features
    _, sigma = mixture.marginal_moments()
    try:
        chol = linalg.cholesky(sigma, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError("marginal covariance is not positive definite") from exc
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    quantile = chi2.ppf(1.0 - alpha, df=d)
    log_volume = (
        np.log(2.0)
        + 0.5 * d * np.log(np.pi)
        - np.log(d)
        - gammaln(0.5 * d)
        + 0.5 * d * np.log(quantile)
        + 0.5 * log_det
    )
    return VolumeEstimate(log_volume=float(log_volume), method="gaussian_ellipsoid", alpha=float(alpha))


def min_log_volume(x, mixture: GaussianMixture, alpha: float = 0.01) -> VolumeEstimate:
    """Smallest of the three implemented region estimates."""
    candidates = [
        log_volume_data_box(x),
        log_volume_pca_box(x),
        log_volume_gaussian_ellipsoid(mixture, alpha),
    ]
    return min(candidates, key=lambda v: v.log_volume)


def density_threshold(volume: VolumeEstimate) -> float:
    """Log-density of a uniform distribution over the region, ``-log V``."""
    return -volume.log_volume


@dataclass(frozen=True)
class ModalPartition:
    """Final clustering: retained modes, dropped modes, per-point labels.

    ``labels`` index into ``modes_retained``; dropped modes keep their
    locations and log-densities for reporting.  ``log_volume_used`` is
    ``+inf`` when no denoising was applied.  ``all_modes_below_threshold``
    flags the degenerate case where every mode fell under the noise
    level and nothing was dropped.
    """

    labels: np.ndarray
    modes_retained: np.ndarray
    retained_log_density: np.ndarray
    modes_dropped: np.ndarray
    dropped_log_density: np.ndarray
    log_volume_used: float
    volume_method: str = "none"
    all_modes_below_threshold: bool = False
    merge_tol: float | None = None
    iterations: int | None = None
    mem_converged: bool | None = None
    unconverged_indices: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int)
        retained = np.asarray(self.modes_retained, dtype=float)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "modes_retained", retained)
        object.__setattr__(self, "modes_dropped", np.asarray(self.modes_dropped, dtype=float))
        object.__setattr__(self, "retained_log_density", np.asarray(self.retained_log_density, dtype=float))
        object.__setattr__(self, "dropped_log_density", np.asarray(self.dropped_log_density, dtype=float))
        if np.unique(labels).size != retained.shape[0]:
            raise ValidationError(
                "number of distinct labels must equal the number of retained modes"
            )
        if not self.all_modes_below_threshold and np.any(
            self.retained_log_density <= -self.log_volume_used
        ):
            raise ValidationError(
                "every retained mode must have log-density above -log(V)"
            )

    @property
    def n_clusters(self) -> int:
        return self.modes_retained.shape[0]


def partition_without_denoising(
    modeset: ModeSet,
    mixture: GaussianMixture,
    iterations: int | None = None,
    mem_converged: bool | None = None,
    unconverged_indices: np.ndarray | None = None,
) -> ModalPartition:
    """Wrap merged modes as a partition, keeping every mode."""
    mld = modeset.mode_log_density
    if mld is None:
        mld = mixture.log_density(modeset.modes)
    return ModalPartition(
        labels=modeset.assignment.copy(),
        modes_retained=modeset.modes,
        retained_log_density=mld,
        modes_dropped=np.empty((0, modeset.modes.shape[1])),
        dropped_log_density=np.empty(0),
        log_volume_used=np.inf,
        volume_method="none",
        merge_tol=modeset.merge_tol,
        iterations=iterations,
        mem_converged=mem_converged,
        unconverged_indices=unconverged_indices,
    )


def denoise_modes(
    modeset: ModeSet,
    mixture: GaussianMixture,
    volume: VolumeEstimate,
    *,
    iterations: int | None = None,
    mem_converged: bool | None = None,
    unconverged_indices: np.ndarray | None = None,
) -> ModalPartition:
    """Drop modes at or below the uniform-noise density and relabel.

    A mode whose log-density does not exceed ``-log V`` is treated as an
    artefact; its points are reassigned to the retained mode nearest in
    Mahalanobis distance under the mixture's marginal covariance.  If
    every mode falls below the threshold nothing is dropped and the
    partition carries a warning flag instead.
    """
    if modeset.n_modes == 0:
        raise ValidationError("modeset is empty")
    if modeset.modes.shape[1] != mixture.n_features:
        raise ValidationError("modeset dimension does not match mixture")
    mld = modeset.mode_log_density
    if mld is None:
        mld = mixture.log_density(modeset.modes)
    threshold = density_threshold(volume)
    drop = mld <= threshold
    if np.all(drop):
        return ModalPartition(
            labels=modeset.assignment.copy(),
            modes_retained=modeset.modes,
            retained_log_density=mld,
            modes_dropped=np.empty((0, modeset.modes.shape[1])),
            dropped_log_density=np.empty(0),
            log_volume_used=volume.log_volume,
            volume_method=volume.method,
            all_modes_below_threshold=True,
            merge_tol=modeset.merge_tol,
            iterations=iterations,
            mem_converged=mem_converged,
            unconverged_indices=unconverged_indices,
        )

    keep_idx = np.flatnonzero(~drop)
    drop_idx = np.flatnonzero(drop)
    new_label = np.full(modeset.n_modes, -1, dtype=int)
    new_label[keep_idx] = np.arange(keep_idx.size)

    if drop_idx.size:
        _, marginal_cov = mixture.marginal_moments()
        factor = linalg.cho_factor(marginal_cov, lower=True)
        kept_modes = modeset.modes[keep_idx]
        for j in drop_idx:
            dev = kept_modes - modeset.modes[j]
            white = linalg.cho_solve(factor, dev.T)
            maha_sq = np.einsum("in,in->n", dev.T, white)
            new_label[j] = int(np.argmin(maha_sq))

    return ModalPartition(
        labels=new_label[modeset.assignment],
        modes_retained=modeset.modes[keep_idx],
        retained_log_density=mld[keep_idx],
        modes_dropped=modeset.modes[drop_idx],
        dropped_log_density=mld[drop_idx],
        log_volume_used=volume.log_volume,
        volume_method=volume.method,
        merge_tol=modeset.merge_tol,
        iterations=iterations,
        mem_converged=mem_converged,
        unconverged_indices=unconverged_indices,
    )


def default_merge_tolerance(mixture: GaussianMixture) -> float:
    """One percent of the average marginal standard deviation."""
    _, sigma = mixture.marginal_moments()
    return 1e-2 * float(np.sqrt(np.trace(sigma) / mixture.n_features))


def _resolve_volume(method: str, x, mixture: GaussianMixture, alpha: float) -> VolumeEstimate:
    if method == "gaussian":
        return log_volume_gaussian_ellipsoid(mixture, alpha)
    if method == "databox":
        return log_volume_data_box(x)
    if method == "pcabox":
        return log_volume_pca_box(x)
    if method == "min":
        return min_log_volume(x, mixture, alpha)
    raise ValidationError(f"unknown denoise method {method!r}")


def modal_cluster(
    mixture: GaussianMixture,
    points,
    config: MemConfig | None = None,
    merge_tol: float | None = None,
    denoise: str = "gaussian",
    alpha: float = 0.01,
) -> ModalPartition:
    """Full pipeline: climb, merge tight clusters, optionally denoise.

    ``merge_tol`` defaults to :func:`default_merge_tolerance`.
    ``denoise`` selects the region-volume estimator (``"none"``,
    ``"gaussian"``, ``"databox"``, ``"pcabox"`` or ``"min"``).  The
    result is deterministic for fixed inputs and settings; a
    non-convergent climb is reported through the partition metadata,
    not an exception.
    """
    if denoise not in DENOISE_METHODS:
        raise ValidationError(
            f"denoise must be one of {DENOISE_METHODS}, got {denoise!r}"
        )
    points = mixture._check_points(points)
    result = run_mem(mixture, points, config)
    if merge_tol is None:
        merge_tol = default_merge_tolerance(mixture)
    modeset = merge_tight_clusters(result.converged_points, merge_tol, mixture)
    meta = dict(
        iterations=result.iterations,
        mem_converged=result.converged,
        unconverged_indices=result.unconverged_indices,
    )
    if denoise == "none":
        return partition_without_denoising(modeset, mixture, **meta)
    volume = _resolve_volume(denoise, points, mixture, alpha)
    return denoise_modes(modeset, mixture, volume, **meta)


@dataclass(frozen=True)
class GridPartition:
    """Domains of attraction evaluated on a 2-D lattice.

    ``labels`` has shape ``(ny, nx)``; ``labels[iy, ix]`` is the mode
    reached from node ``(xs[ix], ys[iy])``.
    """

    xs: np.ndarray
    ys: np.ndarray
    labels: np.ndarray
    modes: np.ndarray
    partition: ModalPartition


def attraction_partition_grid(
    mixture: GaussianMixture,
    bounds,
    resolution,
    config: MemConfig | None = None,
    merge_tol: float | None = None,
    denoise: str = "none",
    alpha: float = 0.01,
) -> GridPartition:
    """Label every node of a rectangular lattice by the mode it climbs to.

    Only two-dimensional mixtures are supported (the output backs
    region plots).  ``bounds`` is ``((x_lo, x_hi), (y_lo, y_hi))`` and
    ``resolution`` the node counts per axis, each at least 2.
    """
    if mixture.n_features != 2:
        raise ValidationError(
            f"attraction grids support d=2 only, mixture has d={mixture.n_features}"
        )
    bounds = np.asarray(bounds, dtype=float)
    if bounds.shape != (2, 2) or not np.all(np.isfinite(bounds)):
        raise ValidationError("bounds must be finite ((x_lo, x_hi), (y_lo, y_hi))")
    if np.any(bounds[:, 1] <= bounds[:, 0]):
        raise ValidationError("each bounds pair must satisfy lo < hi")
    nx, ny = (int(r) for r in resolution)
    if nx < 2 or ny < 2:
        raise ValidationError("resolution must be at least 2 per axis")
    xs = np.linspace(bounds[0, 0], bounds[0, 1], nx)
    ys = np.linspace(bounds[1, 0], bounds[1, 1], ny)
    gx, gy = np.meshgrid(xs, ys)
    nodes = np.column_stack([gx.ravel(), gy.ravel()])
    part = modal_cluster(
        mixture, nodes, config=config, merge_tol=merge_tol, denoise=denoise, alpha=alpha
    )
    return GridPartition(
        xs=xs,
        ys=ys,
        labels=part.labels.reshape(ny, nx),
        modes=part.modes_retained,
        partition=part,
    )
