"""Fixed-step gradient descent over all parameter blocks.

One iteration evaluates every block gradient at the current iterate and
applies the updates simultaneously.  The driver adds two artifact-level
behaviors around that core: convergence detection on the relative objective
change (or an exactly stationary gradient), and a divergence backoff that
restarts from the initial point with a reduced step size when the objective
blows past ten times its starting value or turns non-finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import MatrixSeries, mat, rearrange, vec
from .model import CoefPair, MarcfParams, StructuralDims, assemble
from .objective import (
    GradientSet,
    Hyperparams,
    _block_gradients,
    reg1,
    reg2,
    residuals,
)
from .spectral import equalize_norms, nkp_seed, spectral_split


class DivergenceError(RuntimeError):
    """Objective diverged at every step size the backoff schedule allows."""


@dataclass(frozen=True)
class FitConfig:
    """Hyperparameters and stopping rules for the descent loop.

    ``rel_tol`` stops when |f_j - f_{j-1}| <= rel_tol * max(1, |f_{j-1}|);
    ``grad_atol`` stops when the stacked gradient norm falls below it (the
    exact-fit fast path).  ``gradient_route`` picks how the coefficient
    gradients are formed: "gram" uses precomputed second moments of the
    series and the rearrangement contraction, "contract" streams over the
    residuals; the two agree to rounding error and "auto" chooses by size.
    """

    hp: Hyperparams = field(default_factory=Hyperparams)
    eta: float = 0.001
    max_iter: int = 1000
    rel_tol: float = 1e-8
    backoff_factor: float = 0.1
    max_backoffs: int = 2
    grad_atol: float = 1e-12
    gradient_route: str = "auto"
    init_ridge: float = 1e-4

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("step size eta must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be a positive integer")
        if self.rel_tol < 0:
            raise ValueError("rel_tol must be nonnegative")
        if not (0.0 < self.backoff_factor < 1.0):
            raise ValueError("backoff_factor must lie in (0, 1)")
        if self.max_backoffs < 0:
            raise ValueError("max_backoffs must be nonnegative")
        if self.gradient_route not in ("auto", "gram", "contract"):
            raise ValueError(f"unknown gradient route {self.gradient_route!r}")


@dataclass
class FitReport:
    """Outcome of one descent run (the last backoff attempt, if any)."""

    theta_hat: MarcfParams
    objective_trace: np.ndarray
    iterations_run: int
    converged: bool
    backoffs_used: int
    final_gradient_norm: float
    eta_used: float


class _GramEvaluator:
    """Loss and coefficient gradients from cached second moments.

    The loss gradient with respect to the full coefficient equals
    A Sxx - Syx, which is the average -(Y - AX)X'/T rewritten via the data
    Gram matrices; forming it costs O((p1 p2)^3) per iteration independent
    of T.
    """

    def __init__(self, series: MatrixSeries):
        self.p1, self.p2 = series.p1, series.p2
        t = series.length
        cols = series.data.transpose(0, 2, 1).reshape(len(series), -1)
        x = cols[:-1]
        y = cols[1:]
        self.sxx = x.T @ x / t
        self.syx = y.T @ x / t
        self.cyy = float(np.sum(y * y)) / t

    def loss_and_grads(self, pair: CoefPair):
        a = np.kron(pair.A2, pair.A1)
        a_sxx = a @ self.sxx
        loss = 0.5 * (self.cyy - 2.0 * float(np.vdot(a, self.syx))
                      + float(np.vdot(a, a_sxx)))
        g = rearrange(a_sxx - self.syx, self.p1, self.p2)
        ga1 = mat(g.T @ vec(pair.A2), self.p1, self.p1)
        ga2 = mat(g @ vec(pair.A1), self.p2, self.p2)
        return loss, (ga1, ga2)


class _ContractEvaluator:
    """Loss and coefficient gradients streamed over residual contractions."""

    def __init__(self, series: MatrixSeries):
        self.y = series.data
        self.t = series.length

    def loss_and_grads(self, pair: CoefPair):
        ylag = self.y[:-1]
        w = np.matmul(pair.A1, ylag)
        res = self.y[1:] - w @ pair.A2.T
        loss = float(np.sum(res * res)) / (2.0 * self.t)
        z = ylag @ pair.A2.T
        ga1 = -np.tensordot(res, z, axes=([0, 2], [0, 2])) / self.t
        ga2 = -np.tensordot(res, w, axes=([0, 1], [0, 1])) / self.t
        return loss, (ga1, ga2)


def _make_evaluator(series: MatrixSeries, cfg: FitConfig):
    route = cfg.gradient_route
    if route == "auto":
        n = series.p1 * series.p2
        # gram costs n^3 per step, contraction ~4 T n (p1 + p2)
        route = "gram" if n ** 2 <= 4 * series.length * (series.p1 + series.p2) else "contract"
    return _GramEvaluator(series) if route == "gram" else _ContractEvaluator(series)


def _objective_value(theta: MarcfParams, loss: float, hp: Hyperparams) -> float:
    val = loss
    if hp.lambda1:
        val += hp.lambda1 / 4.0 * reg1(theta)
    if hp.lambda2:
        val += hp.lambda2 / 2.0 * reg2(theta, hp.b)
    return float(val)


def _step(theta: MarcfParams, grads: GradientSet, eta: float) -> MarcfParams:
    g = grads.blocks()
    t = theta.blocks()
    return MarcfParams(*[t[k] - eta * g[k] for k in range(8)], b=theta.b)


def fit(theta0: MarcfParams, series: MatrixSeries, cfg: FitConfig | None = None) -> FitReport:
    """Minimize the regularized objective by simultaneous block updates.

    Returns the last iterate together with the objective trace (one value
    per iterate, so its length is iterations_run + 1).  On divergence the
    run restarts from ``theta0`` with the step size scaled by
    ``backoff_factor``, at most ``max_backoffs`` times; exhausting the
    schedule raises :class:`DivergenceError`.
    """
    cfg = cfg or FitConfig()
    dims = theta0.dims
    if (dims.p1, dims.p2) != (series.p1, series.p2):
        raise ValueError(
            f"theta0 is for a ({dims.p1}, {dims.p2}) panel, series is "
            f"({series.p1}, {series.p2})"
        )
    evaluator = _make_evaluator(series, cfg)
    hp = cfg.hp
    eta = cfg.eta
    for attempt in range(cfg.max_backoffs + 1):
        result = _descend(theta0, evaluator, hp, eta, cfg)
        if result is not None:
            theta, trace, converged, grad_norm = result
            return FitReport(
                theta_hat=theta,
                objective_trace=np.asarray(trace),
                iterations_run=len(trace) - 1,
                converged=converged,
                backoffs_used=attempt,
                final_gradient_norm=grad_norm,
                eta_used=eta,
            )
        eta *= cfg.backoff_factor
    raise DivergenceError(
        f"objective diverged at every step size down to {eta / cfg.backoff_factor:.3e}"
    )


def _descend(theta0, evaluator, hp, eta, cfg):
    """One descent attempt; returns None on divergence."""
    theta = theta0
    pair = assemble(theta)
    loss, ga = evaluator.loss_and_grads(pair)
    f_prev = _objective_value(theta, loss, hp)
    f_init = f_prev
    trace = [f_prev]
    grads = _block_gradients(theta, pair, ga, hp)
    grad_norm = grads.frobenius_norm()
    if grad_norm <= cfg.grad_atol:
        return theta, trace, True, grad_norm
    converged = False
    for _ in range(cfg.max_iter):
        theta = _step(theta, grads, eta)
        pair = assemble(theta)
        loss, ga = evaluator.loss_and_grads(pair)
        f = _objective_value(theta, loss, hp)
        trace.append(f)
        if not np.isfinite(f) or f > 10.0 * f_init:
            return None
        grads = _block_gradients(theta, pair, ga, hp)
        grad_norm = grads.frobenius_norm()
        if abs(f - f_prev) <= cfg.rel_tol * max(1.0, abs(f_prev)) or grad_norm <= cfg.grad_atol:
            converged = True
            f_prev = f
            break
        f_prev = f
    return theta, trace, converged, grad_norm


def fit_rrmar(series: MatrixSeries, r1: int, r2: int, cfg: FitConfig | None = None) -> CoefPair:
    """Reduced-rank fit: descent with no common blocks (d1 = d2 = 0).

    Seeds from the nearest-Kronecker ridge solution, runs the same descent
    loop, and returns the assembled pair with equalized Frobenius norms.
    """
    cfg = cfg or FitConfig()
    dims = StructuralDims(series.p1, series.p2, r1, r2, 0, 0)
    seed = nkp_seed(series, r1, r2, cfg.init_ridge)
    theta0 = spectral_split(seed, dims, cfg.hp.b)
    report = fit(theta0, series, cfg)
    return equalize_norms(assemble(report.theta_hat))


def initialize(series: MatrixSeries, dims: StructuralDims, cfg: FitConfig | None = None) -> MarcfParams:
    """Spectral starting point for the descent at the given dimensions.

    Composes the nearest-Kronecker seed, the reduced-rank pre-fit, and the
    subspace split; the output is identified with balance cfg.hp.b.
    """
    cfg = cfg or FitConfig()
    pair = fit_rrmar(series, dims.r1, dims.r2, cfg)
    return spectral_split(pair, dims, cfg.hp.b)
