"""Regularized least-squares objective and its analytic gradients.

The objective is

    L(theta) + (lambda1 / 4) * reg1(theta) + (lambda2 / 2) * reg2(theta, b)

with L the average squared one-step prediction error, reg1 the squared gap
between ||A1||_F^2 and ||A2||_F^2, and reg2 the deviation of the stacked
bases from b^2-orthonormality.  Gradients flow through the coefficient pair:
the loss gradient is formed with respect to the full Kronecker coefficient,
permuted with the rearrangement operator, contracted against vec(A_i), and
then pushed to the eight parameter blocks by the chain rule.

Every analytic block gradient here matches central finite differences of the
objective; see ``fd_gradient`` for the oracle.  Note the balance-penalty
gradient carries an overall factor 2*lambda2 -- differentiating the penalty
as written requires it, which finite differences confirm.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import MatrixSeries, ShapeError, mat, rearrange, vec
from .model import CoefPair, MarcfParams, assemble


@dataclass(frozen=True)
class Hyperparams:
    """Penalty weights and the balance scale used by the objective."""

    lambda1: float = 1.0
    lambda2: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.lambda1) and self.lambda1 >= 0):
            raise ValueError("lambda1 must be a nonnegative real")
        if not (np.isfinite(self.lambda2) and self.lambda2 >= 0):
            raise ValueError("lambda2 must be a nonnegative real")
        if not (np.isfinite(self.b) and self.b > 0):
            raise ValueError("b must be a positive real")


@dataclass(frozen=True)
class GradientSet:
    """Partial gradients for every parameter block of a MarcfParams."""

    gC1: np.ndarray
    gR1: np.ndarray
    gP1: np.ndarray
    gD1: np.ndarray
    gC2: np.ndarray
    gR2: np.ndarray
    gP2: np.ndarray
    gD2: np.ndarray

    def blocks(self) -> tuple[np.ndarray, ...]:
        return (self.gC1, self.gR1, self.gP1, self.gD1,
                self.gC2, self.gR2, self.gP2, self.gD2)

    def frobenius_norm(self) -> float:
        return float(np.sqrt(sum(np.sum(g * g) for g in self.blocks())))


def _check_match(theta: MarcfParams, series: MatrixSeries):
    dims = theta.dims
    if (dims.p1, dims.p2) != (series.p1, series.p2):
        raise ShapeError(
            f"parameter dims ({dims.p1}, {dims.p2}) do not match series "
            f"({series.p1}, {series.p2})"
        )
    if series.length < 1:
        raise ShapeError("series must contain at least one transition")


def residuals(pair: CoefPair, series: MatrixSeries) -> np.ndarray:
    """(T, p1, p2) array of Y_t - A1 Y_{t-1} A2'."""
    y = series.data
    return y[1:] - np.matmul(pair.A1, y[:-1]) @ pair.A2.T


def ls_loss(theta: MarcfParams, series: MatrixSeries) -> float:
    """Average squared prediction error (1/2T) sum_t ||Y_t - A1 Y_{t-1} A2'||_F^2."""
    _check_match(theta, series)
    res = residuals(assemble(theta), series)
    return float(np.sum(res * res) / (2.0 * series.length))


def reg1(theta: MarcfParams) -> float:
    """Squared Frobenius-norm gap (||A1||^2 - ||A2||^2)^2."""
    pair = assemble(theta)
    return float((np.sum(pair.A1 ** 2) - np.sum(pair.A2 ** 2)) ** 2)


def reg2(theta: MarcfParams, b: float) -> float:
    """Deviation of the stacked bases from the b^2-orthonormality constraints."""
    total = 0.0
    for i in (1, 2):
        for basis in (theta.response_basis(i), theta.predictor_basis(i)):
            k = basis.shape[1]
            total += np.sum((basis.T @ basis - b ** 2 * np.eye(k)) ** 2)
    return float(total)


def objective(theta: MarcfParams, series: MatrixSeries, hp: Hyperparams) -> float:
    """ls_loss + (lambda1/4) reg1 + (lambda2/2) reg2."""
    val = ls_loss(theta, series)
    if hp.lambda1:
        val += hp.lambda1 / 4.0 * reg1(theta)
    if hp.lambda2:
        val += hp.lambda2 / 2.0 * reg2(theta, hp.b)
    return float(val)


def _vec_columns(series: MatrixSeries) -> np.ndarray:
    """(T+1, p1*p2) array whose rows are column-major vec(Y_t)."""
    arr = series.data
    return arr.transpose(0, 2, 1).reshape(arr.shape[0], -1)


def grad_wrt_A(pair: CoefPair, series: MatrixSeries) -> np.ndarray:
    """Gradient of the vectorized loss with respect to the full coefficient:
    -(Y - A X) X' / T with Y, X stacking vec(Y_t), vec(Y_{t-1}) as columns.
    """
    if series.length < 1:
        raise ShapeError("series must contain at least one transition")
    cols = _vec_columns(series)
    x = cols[:-1].T
    y = cols[1:].T
    a = np.kron(pair.A2, pair.A1)
    return -(y - a @ x) @ x.T / series.length


def grad_wrt_A1_A2(pair: CoefPair, series: MatrixSeries) -> tuple[np.ndarray, np.ndarray]:
    """Loss gradients with respect to (A1, A2), via the rearrangement route.

    The full-coefficient gradient is permuted into the rank-one-revealing
    layout and contracted against vec(A2) and vec(A1) respectively.
    """
    p1 = pair.A1.shape[0]
    p2 = pair.A2.shape[0]
    g = rearrange(grad_wrt_A(pair, series), p1, p2)
    ga1 = mat(g.T @ vec(pair.A2), p1, p1)
    ga2 = mat(g @ vec(pair.A1), p2, p2)
    return ga1, ga2


def grad_wrt_A1_A2_contract(
    pair: CoefPair, series: MatrixSeries
) -> tuple[np.ndarray, np.ndarray]:
    """Same gradients computed from per-step residual contractions.

    Avoids forming the (p1 p2)^2 coefficient; agrees with the rearrangement
    route to rounding error.
    """
    y = series.data
    t = series.length
    res = residuals(pair, series)
    z = y[:-1] @ pair.A2.T
    w = np.matmul(pair.A1, y[:-1])
    ga1 = -np.einsum("taj,tbj->ab", res, z) / t
    ga2 = -np.einsum("tja,tjb->ab", res, w) / t
    return ga1, ga2


def _block_gradients(
    theta: MarcfParams,
    pair: CoefPair,
    ga: tuple[np.ndarray, np.ndarray],
    hp: Hyperparams,
) -> GradientSet:
    """Chain-rule pushforward of the coefficient gradients to all blocks."""
    delta = float(np.sum(pair.A1 ** 2) - np.sum(pair.A2 ** 2))
    out = []
    for i, a_i, g_i, sign in ((1, pair.A1, ga[0], 1.0), (2, pair.A2, ga[1], -1.0)):
        c, r, p, d = theta.mode(i)
        di = c.shape[1]
        d11, d12 = d[:di, :di], d[:di, di:]
        d21, d22 = d[di:, :di], d[di:, di:]
        # the norm-gap penalty differentiates like the loss with the
        # residual gradient replaced by (+/- lambda1 * delta) * A_i
        g_eff = g_i + sign * hp.lambda1 * delta * a_i
        g_c = g_eff @ (c @ d11.T + p @ d12.T) + g_eff.T @ (c @ d11 + r @ d21)
        g_r = g_eff @ (c @ d21.T + p @ d22.T)
        g_p = g_eff.T @ (c @ d12 + r @ d22)
        u = np.hstack([c, r])
        v = np.hstack([c, p])
        g_d = u.T @ g_eff @ v
        if hp.lambda2:
            b2 = hp.b ** 2
            two_l2 = 2.0 * hp.lambda2
            g_c = g_c + two_l2 * (2.0 * c @ (c.T @ c - b2 * np.eye(di))
                                  + r @ (r.T @ c) + p @ (p.T @ c))
            s = r.shape[1]
            g_r = g_r + two_l2 * (r @ (r.T @ r - b2 * np.eye(s)) + c @ (c.T @ r))
            g_p = g_p + two_l2 * (p @ (p.T @ p - b2 * np.eye(s)) + c @ (c.T @ p))
        out.extend([g_c, g_r, g_p, g_d])
    return GradientSet(*out)


def full_gradient(
    theta: MarcfParams,
    series: MatrixSeries,
    hp: Hyperparams,
    route: str = "rearrange",
) -> GradientSet:
    """Analytic gradient of the regularized objective for every block.

    ``route`` selects how the coefficient-level loss gradients are obtained:
    "rearrange" forms the full-coefficient gradient and permutes it (the
    reference path), "contract" uses the equivalent residual contractions.
    """
    _check_match(theta, series)
    pair = assemble(theta)
    if route == "rearrange":
        ga = grad_wrt_A1_A2(pair, series)
    elif route == "contract":
        ga = grad_wrt_A1_A2_contract(pair, series)
    else:
        raise ValueError(f"unknown gradient route {route!r}")
    return _block_gradients(theta, pair, ga, hp)


_BLOCK_NAMES = ("C1", "R1", "P1", "D1", "C2", "R2", "P2", "D2")


def fd_gradient(
    theta: MarcfParams,
    series: MatrixSeries,
    hp: Hyperparams,
    h: float = 1e-5,
) -> GradientSet:
    """Central finite differences of the objective, entry by entry.

    Test oracle for ``full_gradient``; O(#parameters) objective evaluations,
    so intended for small instances only.
    """
    if not h > 0:
        raise ValueError("step size h must be positive")
    grads = []
    for name in _BLOCK_NAMES:
        base = getattr(theta, name)
        g = np.zeros_like(base)
        it = np.nditer(base, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            bumped = base.copy()
            bumped[idx] = base[idx] + h
            f_plus = objective(replace(theta, **{name: bumped}), series, hp)
            bumped[idx] = base[idx] - h
            f_minus = objective(replace(theta, **{name: bumped}), series, hp)
            g[idx] = (f_plus - f_minus) / (2.0 * h)
        grads.append(g)
    return GradientSet(*grads)
