"""File formats: numeric CSV in, versioned JSON/CSV artifacts out.

Every float is written with 17 significant digits so that reading the
file back reproduces the exact double.  JSON schemas carry a
``format_version`` field; readers validate structure first and report
the first violation with its path inside the document.
"""

from __future__ import annotations

import csv
import json
import math

import numpy as np

from .errors import ValidationError
from .mixture import CovarianceSpec, GaussianMixture, build_covariance, decompose_covariance

__all__ = [
    "FORMAT_VERSION",
    "format_float",
    "dumps_json",
    "write_json",
    "read_numeric_csv",
    "write_numeric_csv",
    "write_model_json",
    "read_model_json",
    "write_modes_json",
    "write_partition_csv",
    "write_paths_csv",
    "write_grid_csv",
    "write_regions_csv",
    "write_fit_report_json",
    "write_manifest_json",
]

FORMAT_VERSION = 1


def format_float(value: float) -> str:
    """Render a double with 17 significant digits (lossless round trip)."""
    return format(float(value), ".17g")


class _SignificantDigitsEncoder(json.JSONEncoder):
    """JSON encoder that writes floats via :func:`format_float`."""

    def iterencode(self, o, _one_shot=False):
        markers = {} if self.check_circular else None
        encoder = (
            json.encoder.encode_basestring_ascii
            if self.ensure_ascii
            else json.encoder.encode_basestring
        )

        def floatstr(value, _allow_nan=self.allow_nan):
            if not math.isfinite(value):
                raise ValueError(f"non-finite float {value!r} is not serializable")
            return format_float(value)

        iterencode = json.encoder._make_iterencode(
            markers, self.default, encoder, self.indent, floatstr,
            self.key_separator, self.item_separator, self.sort_keys,
            self.skipkeys, _one_shot,
        )
        return iterencode(o, 0)


def _jsonable(obj):
    """Recursively convert numpy containers/scalars; non-finite floats -> null."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


def dumps_json(payload) -> str:
    return json.dumps(_jsonable(payload), cls=_SignificantDigitsEncoder, indent=2) + "\n"


def write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_json(payload))


def _load_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc


def read_numeric_csv(path):
    """Parse a comma-separated numeric matrix.

    A single header row is recognized when any field of the first line
    fails to parse as a float.  Returns ``(matrix, header)`` where
    ``header`` is a list of column names or None.  Ragged rows and
    non-numeric cells raise a validation error naming the 1-based row
    and column.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise ValidationError(f"{path}: file contains no data rows")

    header = None
    try:
        [float(cell) for cell in rows[0]]
    except ValueError:
        header = [cell.strip() for cell in rows[0]]
        rows = rows[1:]
        if not rows:
            raise ValidationError(f"{path}: header only, no data rows")

    width = len(rows[0])
    data = np.empty((len(rows), width))
    offset = 2 if header else 1
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ValidationError(
                f"{path}: row {i + offset} has {len(row)} columns, expected {width}"
            )
        for j, cell in enumerate(row):
            try:
                data[i, j] = float(cell)
            except ValueError:
                raise ValidationError(
                    f"{path}: row {i + offset}, column {j + 1}: "
                    f"could not parse {cell!r} as a number"
                ) from None
    return data, header


def write_numeric_csv(path, matrix, header=None) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header is not None:
            fh.write(",".join(header) + "\n")
        for row in matrix:
            fh.write(",".join(format_float(v) for v in row) + "\n")


def _require(condition: bool, path: str, message: str) -> None:
    if not condition:
        raise ValidationError(f"{path}: {message}")


def write_model_json(path, mixture: GaussianMixture, include_spec: bool = True) -> None:
    """Write a mixture to the versioned model file format.

    The optional ``spec`` block stores each covariance factored into
    volume, shape and orientation; readers cross-check it against the
    covariance matrices.
    """
    payload = {
        "format_version": FORMAT_VERSION,
        "d": mixture.n_features,
        "G": mixture.n_components,
        "model": str(mixture.model.value),
        "weights": mixture.weights,
        "means": mixture.means,
        "covariances": mixture.covariances,
    }
    if include_spec:
        payload["spec"] = [
            {
                "volume": spec.volume,
                "shape": spec.shape,
                "orientation": spec.orientation,
            }
            for spec in map(decompose_covariance, mixture.covariances)
        ]
    write_json(path, payload)


def read_model_json(path) -> GaussianMixture:
    """Load and validate a model file, reporting the first violation."""
    doc = _load_json(path)
    _require(isinstance(doc, dict), "$", "top level must be an object")
    for key in ("format_version", "d", "G", "model", "weights", "means", "covariances"):
        _require(key in doc, "$", f"missing required field {key!r}")
    _require(doc["format_version"] == FORMAT_VERSION, "format_version",
             f"unsupported value {doc['format_version']!r}")
    d, g = doc["d"], doc["G"]
    _require(isinstance(d, int) and d >= 1, "d", "must be an integer >= 1")
    _require(isinstance(g, int) and g >= 1, "G", "must be an integer >= 1")

    def as_array(key, shape):
        try:
            arr = np.asarray(doc[key], dtype=float)
        except (TypeError, ValueError):
            raise ValidationError(f"{key}: not a numeric array") from None
        _require(arr.shape == shape, key, f"expected shape {shape}, got {arr.shape}")
        _require(bool(np.all(np.isfinite(arr))), key, "contains non-finite values")
        return arr

    weights = as_array("weights", (g,))
    means = as_array("means", (g, d))
    covariances = as_array("covariances", (g, d, d))
    try:
        mixture = GaussianMixture(weights, means, covariances, model=doc["model"])
    except ValueError as exc:
        raise ValidationError(f"$: {exc}") from exc

    if "spec" in doc and doc["spec"] is not None:
        block = doc["spec"]
        _require(isinstance(block, list) and len(block) == g, "spec",
                 f"expected a list of {g} entries")
        for k, entry in enumerate(block):
            where = f"spec[{k}]"
            _require(isinstance(entry, dict), where, "must be an object")
            for key in ("volume", "shape", "orientation"):
                _require(key in entry, where, f"missing field {key!r}")
            try:
                spec = CovarianceSpec(
                    volume=float(entry["volume"]),
                    shape=np.asarray(entry["shape"], dtype=float),
                    orientation=np.asarray(entry["orientation"], dtype=float),
                )
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"{where}: {exc}") from exc
            _require(spec.dim == d, where, f"dimension {spec.dim} does not match d={d}")
            rebuilt = build_covariance(spec)
            _require(
                bool(np.max(np.abs(rebuilt - covariances[k])) <= 1e-8),
                where,
                "volume/shape/orientation do not reproduce covariances entry within 1e-8",
            )
    return mixture


def write_modes_json(path, partition) -> None:
    """Mode summary: locations, log-densities, retained/dropped, threshold info."""
    payload = {
        "format_version": FORMAT_VERSION,
        "d": partition.modes_retained.shape[1],
        "merge_tol": partition.merge_tol,
        "volume_method": partition.volume_method,
        "log_volume_used": partition.log_volume_used,
        "all_modes_below_threshold": partition.all_modes_below_threshold,
        "modes_retained": [
            {"location": loc, "log_density": ld}
            for loc, ld in zip(partition.modes_retained, partition.retained_log_density)
        ],
        "modes_dropped": [
            {"location": loc, "log_density": ld}
            for loc, ld in zip(partition.modes_dropped, partition.dropped_log_density)
        ],
    }
    write_json(path, payload)


def write_partition_csv(path, partition) -> None:
    """One row per point: index, cluster label, coordinates of its mode."""
    d = partition.modes_retained.shape[1]
    header = ["point_index", "cluster_label"] + [f"mode_{j}" for j in range(d)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for i, label in enumerate(partition.labels):
            mode = partition.modes_retained[label]
            cells = [str(i), str(int(label))] + [format_float(v) for v in mode]
            fh.write(",".join(cells) + "\n")


def write_paths_csv(path, paths) -> None:
    """Per-iteration positions: point index, iteration, coordinates."""
    paths = np.asarray(paths, dtype=float)
    if paths.ndim != 3:
        raise ValidationError("paths must have shape (T+1, n, d)")
    n_steps, n_points, d = paths.shape
    header = ["point_index", "iteration"] + [f"x_{j}" for j in range(d)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(n_points):
            for t in range(n_steps):
                cells = [str(i), str(t)] + [format_float(v) for v in paths[t, i]]
                fh.write(",".join(cells) + "\n")


def write_grid_csv(path, xs, ys, values, value_column: str) -> None:
    """Lattice rows ``x, y, value``, y-major to match row-major images."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    values = np.asarray(values)
    header = ["x", "y", value_column]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for iy, y in enumerate(ys):
            for ix, x in enumerate(xs):
                v = values[iy, ix]
                cell = str(int(v)) if value_column == "cluster_label" else format_float(v)
                fh.write(f"{format_float(x)},{format_float(y)},{cell}\n")


def write_regions_csv(path, grid) -> None:
    write_grid_csv(path, grid.xs, grid.ys, grid.labels, "cluster_label")


def write_fit_report_json(path, result, seed) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "seed": seed,
        "n_observations": result.n_observations,
        "chosen": {
            "model": result.model,
            "n_components": result.n_components,
            "log_likelihood": result.log_likelihood,
            "n_parameters": result.n_parameters,
            "bic": result.bic,
            "converged": result.converged,
            "n_iter": result.n_iter,
        },
        "table": list(result.score_table or ()),
    }
    write_json(path, payload)


def write_manifest_json(path, subcommand, inputs, outputs, settings,
                        wall_time_seconds, version, warnings=(), iterations=None) -> None:
    """Record everything that affects the outputs, plus provenance."""
    payload = {
        "format_version": FORMAT_VERSION,
        "subcommand": subcommand,
        "inputs": inputs,
        "outputs": outputs,
        "settings": settings,
        "iterations": iterations,
        "warnings": list(warnings),
        "software_version": version,
        "rng": "PCG64",
        "wall_time_seconds": wall_time_seconds,
    }
    write_json(path, payload)
