"""CSV input and output.

Frames are read from CSV files with one unit per row. Outputs are written
with fixed column sets, floats in shortest round-trip form (``repr``) and
missing values as empty fields, so identical results give identical bytes.
"""

from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path

import numpy as np

from .data import AREA, RESPONSE, STRATUM, PopulationFrame, SampleFrame, build_population, build_sample
from .errors import SchemaError

ESTIMATE_COLUMNS = ("area", "estimator", "estimate", "mse", "n_used", "flags")
METRIC_COLUMNS = ("area", "estimator", "metric", "value")
REPLICATE_COLUMNS = ("replicate", "area", "estimator", "estimate", "rmse")
BOOT_REPLICATE_COLUMNS = ("replicate", "area", "estimate")
EFFICIENCY_COLUMNS = ("area", "estimator", "reference", "relative_efficiency")
RESIDUAL_COLUMNS = ("model", "area", "row", "fitted", "residual")
FAILURE_COLUMNS = ("replicate", "estimator", "message")
BOOT_MSE_COLUMNS = ("area", "estimate", "mse", "B", "n_success", "n_failed", "flags")


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if math.isnan(v) else repr(v)
    if isinstance(v, (tuple, list)):
        return ";".join(str(x) for x in v)
    return str(v)


def read_rows(path) -> list:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise SchemaError(f"{path}: empty file")
            rows = list(reader)
    except FileNotFoundError:
        raise SchemaError(f"{path}: file not found") from None
    for i, row in enumerate(rows):
        if None in row or any(v is None for v in row.values()):
            raise SchemaError(f"{path}: row {i} has a different number of fields than the header")
    return rows


def _check_columns(rows, path, needed):
    have = set(rows[0]) if rows else set()
    missing = [c for c in needed if c and c not in have]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {missing}")


def read_population(path, covariates=None, *, area=AREA, response=RESPONSE,
                    stratum=STRATUM) -> PopulationFrame:
    rows = read_rows(path)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    _check_columns(rows, path, [area] + list(covariates or []))
    return build_population(rows, covariates, area=area, response=response, stratum=stratum)


def read_sample(path, covariates=None, *, area=AREA, response=RESPONSE, stratum=STRATUM,
                strata_levels=None) -> SampleFrame:
    rows = read_rows(path)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    _check_columns(rows, path, [area, response] + list(covariates or []))
    return build_sample(rows, covariates, area=area, response=response, stratum=stratum,
                        strata_levels=strata_levels)


def write_frame(frame, path):
    """Write a frame with reserved columns area, response, stratum plus covariates."""
    cols = [AREA, *frame.covariate_names, RESPONSE]
    if frame.has_strata:
        cols.append(STRATUM)
    rows = []
    for i in range(frame.N):
        row = [frame.area_ids[frame.codes[i]], *frame.X[i].tolist(), frame.y[i]]
        if frame.has_strata:
            row.append(frame.stratum_levels[frame.stratum_codes[i]])
        rows.append(row)
    write_csv(path, cols, rows)


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def estimate_rows(estimates):
    return [(e.area, e.estimator_tag, e.estimate, e.mse, e.n_used, e.flags) for e in estimates]


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return None if math.isnan(o) else float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def ensure_writable_dir(path):
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path}: {exc}") from None
    if not os.access(path, os.W_OK):
        raise OSError(f"output directory {path} is not writable")
    return path
