"""Mode finding and modal clustering for finite Gaussian mixtures.

The density of a Gaussian mixture is climbed with a fixed-point
iteration whose update is available in closed form for every point at
once; converged points are merged into modes, low-density modes can be
dropped against a uniform-noise level, and the surviving modes define
a clustering of the data.
"""

from ._version import __version__
from .errors import (
    DegenerateDataError,
    FitFailureError,
    MixModesError,
    NumericalError,
    ValidationError,
)
from .mixture import (
    CovarianceSpec,
    GaussianMixture,
    ModelName,
    build_covariance,
    decompose_covariance,
)
from .modal_em import (
    MemConfig,
    MemResult,
    damping_weight,
    log_density_gradient,
    m_step_batched,
    m_step_reference,
    mem_step,
    run_mem,
)
from .postprocess import (
    GridPartition,
    ModalPartition,
    ModeSet,
    VolumeEstimate,
    attraction_partition_grid,
    default_merge_tolerance,
    denoise_modes,
    density_threshold,
    log_volume_data_box,
    log_volume_gaussian_ellipsoid,
    log_volume_pca_box,
    merge_tight_clusters,
    min_log_volume,
    modal_cluster,
    partition_without_denoising,
)
from .fit import (
    SUPPORTED_MODELS,
    FitConfig,
    FitResult,
    em_fit,
    n_parameters,
    select_model,
)
from .synth import (
    sample_gauss_skewnormal,
    sample_separated_gaussians,
    sample_skew_normal,
)

__all__ = [
    "__version__",
    "MixModesError",
    "ValidationError",
    "DegenerateDataError",
    "NumericalError",
    "FitFailureError",
    "ModelName",
    "CovarianceSpec",
    "GaussianMixture",
    "build_covariance",
    "decompose_covariance",
    "MemConfig",
    "MemResult",
    "damping_weight",
    "m_step_reference",
    "m_step_batched",
    "mem_step",
    "run_mem",
    "log_density_gradient",
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
    "SUPPORTED_MODELS",
    "FitConfig",
    "FitResult",
    "n_parameters",
    "em_fit",
    "select_model",
    "sample_skew_normal",
    "sample_gauss_skewnormal",
    "sample_separated_gaussians",
]
