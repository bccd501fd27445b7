"""Structural-dimension selection and the end-to-end modeling pipeline.

Ranks are selected first, by minimizing a ridge-type ratio of consecutive
singular values of a reduced-rank pre-fit run at generous caps; the additive
penalty s(p1, p2, T) keeps trailing noise-level ratios away from zero.  The
common dimensions are then selected by BIC over the full (d1, d2) grid,
refitting the model in each cell from the shared reduced-rank pre-fit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from .core import MatrixSeries
from .estimation import DivergenceError, FitConfig, FitReport, fit, fit_rrmar
from .model import CoefPair, MarcfParams, StructuralDims, assemble, df_count
from .objective import residuals
from .spectral import spectral_split


@dataclass
class SelectionReport:
    """Everything the two selection stages produced, for audit."""

    rbar1: int
    rbar2: int
    singular_values: tuple[np.ndarray, np.ndarray]
    ratios: tuple[np.ndarray, np.ndarray]
    r_hat: tuple[int, int]
    bic_surface: np.ndarray
    d_hat: tuple[int, int]
    penalty: float = 0.0


def penalty_s(p1: int, p2: int, T: int) -> float:
    """Ridge penalty sqrt((p1 + p2) log(T) / (20 T)); vanishes as T grows."""
    if T < 2:
        raise ValueError("T must be at least 2")
    return float(np.sqrt((p1 + p2) * np.log(T) / (20.0 * T)))


def ridge_ratio_pick(singular_values: np.ndarray, s: float) -> tuple[int, np.ndarray]:
    """Rank minimizing (sigma_{j+1} + s) / (sigma_j + s); ties -> smallest j.

    Returns the 1-based rank and the full ratio sequence.
    """
    sv = np.asarray(singular_values, dtype=float)
    if sv.size < 2:
        raise ValueError("need at least two singular values to form a ratio")
    ratios = (sv[1:] + s) / (sv[:-1] + s)
    return int(np.argmin(ratios)) + 1, ratios


def select_ranks(
    series: MatrixSeries,
    rbar1: int,
    rbar2: int,
    cfg: FitConfig | None = None,
) -> tuple[int, int, dict]:
    """Select (r1, r2) from the singular values of a rank-capped pre-fit.

    The returned diagnostics carry the fitted pair, the singular values,
    the ratio sequences, and the penalty value.
    """
    if min(rbar1, rbar2) < 2:
        raise ValueError("rank caps must be at least 2")
    cfg = cfg or FitConfig()
    pair = fit_rrmar(series, rbar1, rbar2, cfg)
    s = penalty_s(series.p1, series.p2, series.length)
    sv1 = np.linalg.svd(pair.A1, compute_uv=False)[:rbar1]
    sv2 = np.linalg.svd(pair.A2, compute_uv=False)[:rbar2]
    r1, ratios1 = ridge_ratio_pick(sv1, s)
    r2, ratios2 = ridge_ratio_pick(sv2, s)
    diag = {
        "pair": pair,
        "singular_values": (sv1, sv2),
        "ratios": (ratios1, ratios2),
        "penalty": s,
    }
    return r1, r2, diag


def bic(series: MatrixSeries, theta_hat: MarcfParams, dims: StructuralDims) -> float:
    """T p1 p2 log(RSS) + df log(T); -inf signals an exact fit (RSS = 0)."""
    t = series.length
    res = residuals(assemble(theta_hat), series)
    rss = float(np.sum(res * res))
    if rss <= 0.0:
        return float("-inf")
    return t * series.p1 * series.p2 * np.log(rss) + df_count(dims) * np.log(t)


def _fit_cell(series, pair, dims, cfg):
    try:
        theta0 = spectral_split(pair, dims, cfg.hp.b)
        report = fit(theta0, series, cfg)
        return bic(series, report.theta_hat, dims), report
    except (DivergenceError, ValueError, np.linalg.LinAlgError):
        return float("inf"), None


def select_common_dims(
    series: MatrixSeries,
    r1: int,
    r2: int,
    cfg: FitConfig | None = None,
    pair: CoefPair | None = None,
    n_jobs: int = 1,
) -> tuple[int, int, np.ndarray, dict]:
    """Grid-search (d1, d2) over 0..r1 x 0..r2 by BIC.

    Every cell initializes from the same reduced-rank pre-fit (computed here
    unless supplied), runs the descent, and scores the result; failed cells
    score +inf.  Exact ties prefer larger d1 + d2 (fewer free parameters),
    then larger d1.  Returns the selected pair, the full BIC surface
    (rows d1, columns d2), and per-cell fit reports for reuse.
    """
    cfg = cfg or FitConfig()
    if pair is None:
        pair = fit_rrmar(series, r1, r2, cfg)
    cells = [(d1, d2) for d1 in range(r1 + 1) for d2 in range(r2 + 1)]
    dims_list = [
        StructuralDims(series.p1, series.p2, r1, r2, d1, d2) for d1, d2 in cells
    ]
    if n_jobs == 1:
        results = [_fit_cell(series, pair, dims, cfg) for dims in dims_list]
    else:
        results = Parallel(n_jobs=n_jobs)(
            delayed(_fit_cell)(series, pair, dims, cfg) for dims in dims_list
        )
    surface = np.full((r1 + 1, r2 + 1), np.inf)
    fits: dict[tuple[int, int], FitReport | None] = {}
    for (d1, d2), (score, report) in zip(cells, results):
        surface[d1, d2] = score
        fits[(d1, d2)] = report
    # argmin with ties broken toward larger d1 + d2, then larger d1
    best = min(cells, key=lambda c: (surface[c[0], c[1]], -(c[0] + c[1]), -c[0]))
    if not np.isfinite(surface[best[0], best[1]]) and surface[best[0], best[1]] > 0:
        raise DivergenceError("every BIC cell failed to fit")
    return best[0], best[1], surface, {"fits": fits, "pair": pair}


def run_pipeline(
    series: MatrixSeries,
    rbar1: int | None = None,
    rbar2: int | None = None,
    cfg: FitConfig | None = None,
    n_jobs: int = 1,
) -> tuple[SelectionReport, FitReport]:
    """Rank selection, common-dimension selection, and final estimation.

    Rank caps default to min(p_i, 8).  The final fit at the selected
    dimensions is the winning BIC cell's fit (a refit from the same
    initialization is identical by determinism).
    """
    cfg = cfg or FitConfig()
    rbar1 = min(series.p1, 8) if rbar1 is None else rbar1
    rbar2 = min(series.p2, 8) if rbar2 is None else rbar2
    r1, r2, diag = select_ranks(series, rbar1, rbar2, cfg)
    d1, d2, surface, details = select_common_dims(series, r1, r2, cfg, n_jobs=n_jobs)
    final = details["fits"][(d1, d2)]
    report = SelectionReport(
        rbar1=rbar1,
        rbar2=rbar2,
        singular_values=diag["singular_values"],
        ratios=diag["ratios"],
        r_hat=(r1, r2),
        bic_surface=surface,
        d_hat=(d1, d2),
        penalty=diag["penalty"],
    )
    return report, final
