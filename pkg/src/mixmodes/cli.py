"""Command-line interface: fit, cluster, grids and synthetic data.

Every subcommand writes a ``manifest.json`` recording the resolved
settings, seed, software version and wall time, so a run can be
reproduced byte-for-byte (up to the wall-time field) from the manifest
alone.  Exit codes: 0 success (possibly with warnings in the
manifest), 2 for input or validation problems, 3 for computation
failures.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from ._version import __version__
from .errors import (
    DegenerateDataError,
    FitFailureError,
    NumericalError,
    ValidationError,
)
from .fit import SUPPORTED_MODELS, FitConfig, select_model
from .mixture import GaussianMixture
from .modal_em import MemConfig, run_mem
from .postprocess import (
    DENOISE_METHODS,
    attraction_partition_grid,
    default_merge_tolerance,
    denoise_modes,
    merge_tight_clusters,
    partition_without_denoising,
    _resolve_volume,
)
from .serialize import (
    read_model_json,
    read_numeric_csv,
    write_fit_report_json,
    write_grid_csv,
    write_manifest_json,
    write_model_json,
    write_modes_json,
    write_numeric_csv,
    write_partition_csv,
    write_paths_csv,
    write_regions_csv,
)
from .synth import sample_gauss_skewnormal, sample_separated_gaussians

GENERATOR_NAMES = ("gauss-skewnormal", "separated-gaussians")


def _parse_components(text: str) -> tuple[int, ...]:
    values: list[int] = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if ":" in chunk:
            lo, hi = chunk.split(":", 1)
            values.extend(range(int(lo), int(hi) + 1))
        else:
            values.append(int(chunk))
    if not values:
        raise ValueError("empty component list")
    return tuple(sorted(set(values)))


def _parse_models(text: str) -> tuple[str, ...]:
    return tuple(m.strip().upper() for m in text.split(",") if m.strip())


def _resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return int(seed)
    return int(np.random.SeedSequence().generate_state(1, np.uint64)[0])


def _apply_thread_cap(threads: int | None):
    """Cap numerical worker threads; returns (resolved value, warning or None)."""
    if threads is None:
        return None, None
    if threads < 1:
        raise ValidationError("--threads must be >= 1")
    try:
        import threadpoolctl
    except ImportError:
        return threads, "--threads requested but threadpoolctl is not installed; cap not applied"
    threadpoolctl.threadpool_limits(limits=threads)
    return threads, None


def _outdir(args) -> str:
    os.makedirs(args.output_dir, exist_ok=True)
    return args.output_dir


def _load_model_and_data(model_path, data_path):
    mixture = read_model_json(model_path)
    data, _ = read_numeric_csv(data_path)
    if data.shape[1] != mixture.n_features:
        raise ValidationError(
            f"data has {data.shape[1]} columns but the model expects "
            f"{mixture.n_features}"
        )
    return mixture, data


def _grid_axes(mixture: GaussianMixture, args):
    """Resolve lattice bounds (explicit flags or mean +/- 3 sd) and sizes."""
    mean, cov = mixture.marginal_moments()
    sds = np.sqrt(np.diag(cov))
    xlim = args.xlim if args.xlim else (mean[0] - 3 * sds[0], mean[0] + 3 * sds[0])
    ylim = args.ylim if args.ylim else (mean[1] - 3 * sds[1], mean[1] + 3 * sds[1])
    res = args.resolution
    nx, ny = (res[0], res[0]) if len(res) == 1 else (res[0], res[1])
    if nx < 2 or ny < 2:
        raise ValidationError("--resolution must be at least 2 per axis")
    return (float(xlim[0]), float(xlim[1])), (float(ylim[0]), float(ylim[1])), nx, ny


def cmd_fit(args) -> int:
    started = time.perf_counter()
    outdir = _outdir(args)
    threads, thread_warning = _apply_thread_cap(args.threads)
    seed = _resolve_seed(args.seed)
    data, _ = read_numeric_csv(args.data)
    config = FitConfig(
        component_range=args.components,
        models=args.models,
        em_tolerance=args.em_tol,
        em_max_iter=args.em_max_iter,
        restarts=args.restarts,
        seed=seed,
    )
    result = select_model(data, config)

    model_path = os.path.join(outdir, "model.json")
    report_path = os.path.join(outdir, "fit_report.json")
    write_model_json(model_path, result.mixture)
    write_fit_report_json(report_path, result, seed)
    warnings = [] if thread_warning is None else [thread_warning]
    if not result.converged:
        warnings.append(
            f"EM did not converge within {config.em_max_iter} iterations "
            "for the selected model"
        )
    write_manifest_json(
        os.path.join(outdir, "manifest.json"),
        subcommand="fit",
        inputs={"data": args.data},
        outputs={"model": model_path, "fit_report": report_path},
        settings={
            "components": list(config.component_range),
            "models": list(config.models),
            "em_tolerance": config.em_tolerance,
            "em_max_iter": config.em_max_iter,
            "restarts": config.restarts,
            "seed": seed,
            "threads": threads,
        },
        iterations=result.n_iter,
        warnings=warnings,
        version=__version__,
        wall_time_seconds=time.perf_counter() - started,
    )
    print(
        f"selected model={result.model} G={result.n_components} "
        f"bic={result.bic:.6g} -> {model_path}"
    )
    return 0


def cmd_cluster(args) -> int:
    started = time.perf_counter()
    outdir = _outdir(args)
    threads, thread_warning = _apply_thread_cap(args.threads)
    mixture, data = _load_model_and_data(args.model, args.data)
    config = MemConfig(
        tolerance=args.epsilon,
        max_iterations=args.max_iter,
        damping_enabled=not args.no_damping,
        damping_rate=args.beta,
        record_paths=args.paths,
    )
    result = run_mem(mixture, data, config)
    merge_tol = (
        float(args.merge_tol)
        if args.merge_tol is not None
        else default_merge_tolerance(mixture)
    )
    modeset = merge_tight_clusters(result.converged_points, merge_tol, mixture)
    meta = dict(
        iterations=result.iterations,
        mem_converged=result.converged,
        unconverged_indices=result.unconverged_indices,
    )
    if args.denoise == "none":
        partition = partition_without_denoising(modeset, mixture, **meta)
    else:
        volume = _resolve_volume(args.denoise, data, mixture, args.alpha)
        partition = denoise_modes(modeset, mixture, volume, **meta)

    partition_path = os.path.join(outdir, "partition.csv")
    modes_path = os.path.join(outdir, "modes.json")
    write_partition_csv(partition_path, partition)
    write_modes_json(modes_path, partition)
    outputs = {"partition": partition_path, "modes": modes_path}
    if args.paths:
        paths_path = os.path.join(outdir, "paths.csv")
        write_paths_csv(paths_path, result.paths)
        outputs["paths"] = paths_path

    warnings = [] if thread_warning is None else [thread_warning]
    if not result.converged:
        warnings.append(
            f"{result.unconverged_indices.size} points did not converge "
            f"within {config.max_iterations} iterations"
        )
    if partition.all_modes_below_threshold:
        warnings.append(
            "every mode fell at or below the density threshold; none were dropped"
        )
    write_manifest_json(
        os.path.join(outdir, "manifest.json"),
        subcommand="cluster",
        inputs={"model": args.model, "data": args.data},
        outputs=outputs,
        settings={
            "epsilon": config.tolerance,
            "max_iter": config.max_iterations,
            "damping": config.damping_enabled,
            "beta": config.damping_rate,
            "merge_tol": merge_tol,
            "denoise": args.denoise,
            "alpha": args.alpha,
            "paths": args.paths,
            "threads": threads,
        },
        iterations=result.iterations,
        warnings=warnings,
        version=__version__,
        wall_time_seconds=time.perf_counter() - started,
    )
    print(
        f"{partition.n_clusters} clusters from {modeset.n_modes} modes "
        f"({partition.modes_dropped.shape[0]} dropped) -> {partition_path}"
    )
    return 0


def _require_bivariate(mixture: GaussianMixture) -> None:
    if mixture.n_features != 2:
        raise ValidationError(
            f"grids need a bivariate model, got d={mixture.n_features}"
        )


def cmd_density_grid(args) -> int:
    started = time.perf_counter()
    outdir = _outdir(args)
    threads, thread_warning = _apply_thread_cap(args.threads)
    mixture = read_model_json(args.model)
    _require_bivariate(mixture)
    (xlo, xhi), (ylo, yhi), nx, ny = _grid_axes(mixture, args)
    xs = np.linspace(xlo, xhi, nx)
    ys = np.linspace(ylo, yhi, ny)
    gx, gy = np.meshgrid(xs, ys)
    values = mixture.log_density(np.column_stack([gx.ravel(), gy.ravel()]))
    grid_path = os.path.join(outdir, "grid.csv")
    write_grid_csv(grid_path, xs, ys, values.reshape(ny, nx), "log_density")
    write_manifest_json(
        os.path.join(outdir, "manifest.json"),
        subcommand="density-grid",
        inputs={"model": args.model},
        outputs={"grid": grid_path},
        settings={
            "xlim": [xlo, xhi],
            "ylim": [ylo, yhi],
            "resolution": [nx, ny],
            "threads": threads,
        },
        warnings=[] if thread_warning is None else [thread_warning],
        version=__version__,
        wall_time_seconds=time.perf_counter() - started,
    )
    print(f"{nx * ny} lattice nodes -> {grid_path}")
    return 0


def cmd_partition_grid(args) -> int:
    started = time.perf_counter()
    outdir = _outdir(args)
    threads, thread_warning = _apply_thread_cap(args.threads)
    mixture = read_model_json(args.model)
    _require_bivariate(mixture)
    (xlo, xhi), (ylo, yhi), nx, ny = _grid_axes(mixture, args)
    config = MemConfig(
        tolerance=args.epsilon,
        max_iterations=args.max_iter,
        damping_enabled=not args.no_damping,
        damping_rate=args.beta,
    )
    merge_tol = (
        float(args.merge_tol)
        if args.merge_tol is not None
        else default_merge_tolerance(mixture)
    )
    grid = attraction_partition_grid(
        mixture,
        bounds=((xlo, xhi), (ylo, yhi)),
        resolution=(nx, ny),
        config=config,
        merge_tol=merge_tol,
        denoise=args.denoise,
        alpha=args.alpha,
    )
    regions_path = os.path.join(outdir, "regions.csv")
    write_regions_csv(regions_path, grid)
    modes_path = os.path.join(outdir, "modes.json")
    write_modes_json(modes_path, grid.partition)
    warnings = [] if thread_warning is None else [thread_warning]
    if grid.partition.mem_converged is False:
        warnings.append(
            f"{grid.partition.unconverged_indices.size} lattice nodes did not "
            f"converge within {config.max_iterations} iterations"
        )
    write_manifest_json(
        os.path.join(outdir, "manifest.json"),
        subcommand="partition-grid",
        inputs={"model": args.model},
        outputs={"regions": regions_path, "modes": modes_path},
        settings={
            "xlim": [xlo, xhi],
            "ylim": [ylo, yhi],
            "resolution": [nx, ny],
            "epsilon": config.tolerance,
            "max_iter": config.max_iterations,
            "damping": config.damping_enabled,
            "beta": config.damping_rate,
            "merge_tol": merge_tol,
            "denoise": args.denoise,
            "alpha": args.alpha,
            "threads": threads,
        },
        iterations=grid.partition.iterations,
        warnings=warnings,
        version=__version__,
        wall_time_seconds=time.perf_counter() - started,
    )
    print(f"{grid.modes.shape[0]} attraction regions -> {regions_path}")
    return 0


def cmd_synth(args) -> int:
    started = time.perf_counter()
    outdir = _outdir(args)
    seed = _resolve_seed(args.seed)
    if args.n < 1:
        raise ValidationError("--n must be >= 1")
    settings = {"generator": args.generator, "n": args.n, "seed": seed}
    if args.generator == "gauss-skewnormal":
        data, labels = sample_gauss_skewnormal(args.n, seed)
    else:
        data, labels, _ = sample_separated_gaussians(
            args.n, args.components, args.dim, args.separation, seed
        )
        settings.update(
            components=args.components, dim=args.dim, separation=args.separation
        )
    data_path = os.path.join(outdir, "data.csv")
    truth_path = os.path.join(outdir, "truth.csv")
    write_numeric_csv(
        data_path, data, header=[f"x_{j}" for j in range(data.shape[1])]
    )
    with open(truth_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("label\n")
        for lab in labels:
            fh.write(f"{int(lab)}\n")
    write_manifest_json(
        os.path.join(outdir, "manifest.json"),
        subcommand="synth",
        inputs={},
        outputs={"data": data_path, "truth": truth_path},
        settings=settings,
        version=__version__,
        wall_time_seconds=time.perf_counter() - started,
    )
    print(f"{args.n} samples from {args.generator} -> {data_path}")
    return 0


def _add_common(parser) -> None:
    parser.add_argument(
        "-o", "--output-dir", default=".", help="directory for output files"
    )
    parser.add_argument(
        "--threads", type=int, default=None,
        help="cap numerical worker threads (default: all available cores)",
    )


def _add_mem_flags(parser) -> None:
    parser.add_argument(
        "--epsilon", type=float, default=1e-5,
        help="per-point relative-change stopping tolerance",
    )
    parser.add_argument(
        "--max-iter", type=int, default=1000, help="iteration cap for the climb"
    )
    parser.add_argument(
        "--no-damping", action="store_true",
        help="take full fixed-point steps instead of damped ones",
    )
    parser.add_argument(
        "--beta", type=float, default=0.1, help="damping schedule rate"
    )
    parser.add_argument(
        "--merge-tol", type=float, default=None,
        help="tight-cluster merge tolerance "
        "(default: 1%% of the average marginal standard deviation)",
    )


def _add_denoise_flags(parser, default: str) -> None:
    parser.add_argument(
        "--denoise", choices=DENOISE_METHODS, default=default,
        help="region-volume estimator for dropping low-density modes",
    )
    parser.add_argument(
        "--alpha", type=float, default=0.01,
        help="tail mass left outside the Gaussian-ellipsoid region",
    )


def _add_grid_flags(parser) -> None:
    parser.add_argument(
        "--xlim", type=float, nargs=2, metavar=("LO", "HI"), default=None,
        help="x bounds (default: marginal mean +/- 3 sd)",
    )
    parser.add_argument(
        "--ylim", type=float, nargs=2, metavar=("LO", "HI"), default=None,
        help="y bounds (default: marginal mean +/- 3 sd)",
    )
    parser.add_argument(
        "--resolution", type=int, nargs="+", default=[100], metavar="N",
        help="lattice nodes per axis (one value or nx ny)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixmodes",
        description="Find density modes of Gaussian mixtures and cluster by them.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser(
        "fit", help="fit a Gaussian mixture to CSV data with BIC selection",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument("data", help="numeric CSV (optional header row)")
    p.add_argument(
        "--models", type=_parse_models, default=SUPPORTED_MODELS,
        help="comma-separated covariance structures "
        f"(subset of {','.join(SUPPORTED_MODELS)})",
    )
    p.add_argument(
        "--components", type=_parse_components, default=tuple(range(1, 10)),
        help="candidate component counts, e.g. 1:9 or 2,3,5",
    )
    p.add_argument("--restarts", type=int, default=5, help="independent EM starts")
    p.add_argument(
        "--em-tol", type=float, default=1e-8,
        help="relative log-likelihood change that stops EM",
    )
    p.add_argument("--em-max-iter", type=int, default=500, help="EM iteration cap")
    p.add_argument("--seed", type=int, default=None, help="64-bit RNG seed")
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser(
        "cluster", help="assign points to the density modes they climb to",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument("model", help="model.json describing the mixture")
    p.add_argument("data", help="numeric CSV of points to cluster")
    _add_mem_flags(p)
    _add_denoise_flags(p, default="gaussian")
    p.add_argument(
        "--paths", action="store_true", help="also write per-iteration positions"
    )
    _add_common(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser(
        "density-grid", help="log-density values over a 2-D lattice",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument("model", help="model.json describing the mixture")
    _add_grid_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_density_grid)

    p = sub.add_parser(
        "partition-grid", help="domains of attraction over a 2-D lattice",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument("model", help="model.json describing the mixture")
    _add_grid_flags(p)
    _add_mem_flags(p)
    _add_denoise_flags(p, default="none")
    _add_common(p)
    p.set_defaults(func=cmd_partition_grid)

    p = sub.add_parser(
        "synth", help="sample a benchmark dataset with known labels",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument("generator", choices=GENERATOR_NAMES, help="which dataset to draw")
    p.add_argument("--n", type=int, default=500, help="number of samples")
    p.add_argument("--seed", type=int, default=None, help="64-bit RNG seed")
    p.add_argument(
        "--components", type=int, default=3,
        help="number of components (separated-gaussians only)",
    )
    p.add_argument(
        "--dim", type=int, default=2, help="dimension (separated-gaussians only)"
    )
    p.add_argument(
        "--separation", type=float, default=10.0,
        help="mean separation in within-component standard deviations "
        "(separated-gaussians only)",
    )
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, DegenerateDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, FitFailureError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
