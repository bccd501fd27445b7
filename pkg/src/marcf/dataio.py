"""File formats: series CSV, parameter JSON, and report serialization.

The dataset file is a plain CSV with header ``t,y_1_1,y_2_1,...,y_p1_p2``;
value columns follow column-major vectorization order (entry (i, j) sits at
column (j-1) p1 + i), one row per time index starting at t = 0.  All floats
are written with 17 significant digits so parsing reproduces the doubles
exactly.  Parameters serialize to JSON with matrices as row-major nested
arrays.
"""

from __future__ import annotations

import csv
import json
import re
import warnings
from pathlib import Path

import numpy as np

from .core import MatrixSeries
from .estimation import FitReport
from .model import MarcfParams, StructuralDims
from .selection import SelectionReport

_FLOAT_FMT = "%.17g"
_COL_RE = re.compile(r"^y_(\d+)_(\d+)$")


def _fmt(x: float) -> str:
    return _FLOAT_FMT % float(x)


def write_series(path: str | Path, series: MatrixSeries) -> None:
    """Write series.csv in column-major vec order."""
    path = Path(path)
    p1, p2 = series.p1, series.p2
    header = ["t"] + [f"y_{i}_{j}" for j in range(1, p2 + 1) for i in range(1, p1 + 1)]
    flat = series.data.transpose(0, 2, 1).reshape(len(series), p1 * p2)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(len(series)):
            writer.writerow([str(t)] + [_fmt(v) for v in flat[t]])


def read_series(path: str | Path, meta: dict | None = None) -> MatrixSeries:
    """Read series.csv; shape comes from meta when given, else from the header."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]
    if meta is not None:
        p1, p2 = int(meta["p1"]), int(meta["p2"])
    else:
        p1 = p2 = 0
        for name in header[1:]:
            m = _COL_RE.match(name)
            if not m:
                raise ValueError(f"unrecognized series column {name!r}")
            p1 = max(p1, int(m.group(1)))
            p2 = max(p2, int(m.group(2)))
    n_cols = p1 * p2
    if len(header) != n_cols + 1:
        raise ValueError(f"expected {n_cols + 1} columns, found {len(header)}")
    data = np.empty((len(rows), p2, p1))
    for k, row in enumerate(rows):
        data[k] = np.asarray(row[1:], dtype=float).reshape(p2, p1)
    series_arr = data.transpose(0, 2, 1)
    labels = (meta or {}).get("row_labels"), (meta or {}).get("col_labels")
    return MatrixSeries(series_arr, row_labels=labels[0], col_labels=labels[1])


def write_meta(path: str | Path, series: MatrixSeries) -> None:
    payload = {
        "p1": series.p1,
        "p2": series.p2,
        "row_labels": series.row_labels,
        "col_labels": series.col_labels,
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def read_meta(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def params_to_dict(theta: MarcfParams) -> dict:
    dims = theta.dims
    return {
        "dims": {"p1": dims.p1, "p2": dims.p2, "r1": dims.r1, "r2": dims.r2,
                 "d1": dims.d1, "d2": dims.d2},
        "b": theta.b,
        "vec_order": "column-major",
        "C1": theta.C1.tolist(), "R1": theta.R1.tolist(),
        "P1": theta.P1.tolist(), "D1": theta.D1.tolist(),
        "C2": theta.C2.tolist(), "R2": theta.R2.tolist(),
        "P2": theta.P2.tolist(), "D2": theta.D2.tolist(),
    }


def params_from_dict(payload: dict) -> MarcfParams:
    d = payload["dims"]
    dims = StructuralDims(d["p1"], d["p2"], d["r1"], d["r2"], d["d1"], d["d2"])

    def block(name, rows, cols):
        arr = np.asarray(payload[name], dtype=float).reshape(rows, cols)
        return arr

    out = MarcfParams(
        block("C1", dims.p1, dims.d1),
        block("R1", dims.p1, dims.r1 - dims.d1),
        block("P1", dims.p1, dims.r1 - dims.d1),
        block("D1", dims.r1, dims.r1),
        block("C2", dims.p2, dims.d2),
        block("R2", dims.p2, dims.r2 - dims.d2),
        block("P2", dims.p2, dims.r2 - dims.d2),
        block("D2", dims.r2, dims.r2),
        b=float(payload["b"]),
    )
    return out


def write_params(path: str | Path, theta: MarcfParams) -> None:
    Path(path).write_text(json.dumps(params_to_dict(theta), indent=2) + "\n")


def read_params(path: str | Path) -> MarcfParams:
    return params_from_dict(json.loads(Path(path).read_text()))


def fit_report_to_dict(report: FitReport) -> dict:
    return {
        "objective_trace": [float(v) for v in report.objective_trace],
        "iterations_run": report.iterations_run,
        "converged": report.converged,
        "backoffs_used": report.backoffs_used,
        "final_gradient_norm": report.final_gradient_norm,
        "eta_used": report.eta_used,
        "theta_hat": params_to_dict(report.theta_hat),
    }


def selection_report_to_dict(report: SelectionReport) -> dict:
    return {
        "rbar1": report.rbar1,
        "rbar2": report.rbar2,
        "penalty": report.penalty,
        "singular_values": [list(map(float, sv)) for sv in report.singular_values],
        "ratios": [list(map(float, rr)) for rr in report.ratios],
        "r_hat": list(report.r_hat),
        "bic_surface": [[float(v) for v in row] for row in report.bic_surface],
        "d_hat": list(report.d_hat),
    }


def write_bic_csv(path: str | Path, surface: np.ndarray) -> None:
    """BIC surface as CSV: rows indexed by d1, columns by d2."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["d1"] + [f"d2={j}" for j in range(surface.shape[1])])
        for i in range(surface.shape[0]):
            writer.writerow([str(i)] + [_fmt(v) for v in surface[i]])


def write_eval_csv(path: str | Path, model: str, sse: np.ndarray) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window_index", "model", "sse"])
        for w, value in enumerate(sse):
            writer.writerow([str(w), model, _fmt(value)])


def standardize_series(series: MatrixSeries) -> tuple[MatrixSeries, dict]:
    """Per-entry standardization across time to zero mean, unit variance.

    Returns the transformed series and a transform record (means and
    standard deviations as nested row-major lists) sufficient to invert
    forecasts.  Channels with (near-)zero variance are left at unit scale.
    """
    arr = series.data
    mean = arr.mean(axis=0)
    std = arr.std(axis=0)
    dead = std < 1e-12
    if np.any(dead):
        warnings.warn(f"{int(dead.sum())} constant channel(s) left unscaled")
        std = np.where(dead, 1.0, std)
    out = MatrixSeries((arr - mean) / std, series.row_labels, series.col_labels)
    transform = {"mean": mean.tolist(), "std": std.tolist()}
    return out, transform


def unstandardize_matrix(y: np.ndarray, transform: dict) -> np.ndarray:
    """Map a standardized-scale matrix back to the original scale."""
    mean = np.asarray(transform["mean"], dtype=float)
    std = np.asarray(transform["std"], dtype=float)
    return y * std + mean
