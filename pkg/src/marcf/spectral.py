"""Spectral initialization: nearest-Kronecker seeding and subspace splitting.

The seeding step solves a ridge-regularized full least squares on the
vectorized series, permutes the coefficient into the rank-one-revealing
layout, and reads the nearest Kronecker pair off its leading singular
triplet.  The splitting step decomposes a low-rank coefficient pair into
common / response-specific / predictor-specific bases using projector
algebra: span(R) is recovered from P_U P_V-perp, span(P) from P_V P_U-perp,
and span(C) from the leading eigenvectors of the doubly deflated projector
sum.
"""

from __future__ import annotations

import warnings

import numpy as np

from .core import MatrixSeries, ShapeError, mat, rearrange, vec
from .model import CoefPair, MarcfParams, StructuralDims

RANK_TOL = 1e-10
GAP_WARN = 1e-6


def _fix_sign(columns: np.ndarray) -> np.ndarray:
    """Flip each column so its first nonzero component is positive."""
    out = columns.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        nz = np.nonzero(np.abs(col) > 1e-14)[0]
        if nz.size and col[nz[0]] < 0:
            out[:, j] = -col
    return out


def equalize_norms(pair: CoefPair) -> CoefPair:
    """Rescale (A1, A2) to (c A1, A2 / c) so Frobenius norms match."""
    n1, n2 = np.linalg.norm(pair.A1), np.linalg.norm(pair.A2)
    if n1 == 0 or n2 == 0:
        return pair
    c = np.sqrt(n2 / n1)
    return CoefPair(c * pair.A1, pair.A2 / c)


def _truncate_rank(a: np.ndarray, r: int) -> np.ndarray:
    u, s, vt = np.linalg.svd(a)
    return (u[:, :r] * s[:r]) @ vt[:r]


def nkp_seed(series: MatrixSeries, r1: int, r2: int, ridge: float = 1e-4) -> CoefPair:
    """Rank-(r1, r2) coefficient seed from ridge least squares.

    Solves A_hat = Y X' (X X' + lam I)^{-1} on the vectorized data (lam is
    ``ridge`` scaled by the mean diagonal of X X', so ridge=1e-4 means a
    1e-4 relative shrinkage), takes the nearest Kronecker pair of A_hat via
    the rearrangement SVD, truncates each factor to its rank cap, and
    equalizes norms.
    """
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    p1, p2 = series.p1, series.p2
    if not (1 <= r1 <= p1 and 1 <= r2 <= p2):
        raise ShapeError(f"rank caps ({r1}, {r2}) incompatible with ({p1}, {p2})")
    cols = series.data.transpose(0, 2, 1).reshape(len(series), -1)
    x = cols[:-1].T
    y = cols[1:].T
    gram = x @ x.T
    scale = np.trace(gram) / gram.shape[0]
    lam = ridge * scale
    if lam == 0.0:
        eigs = np.linalg.eigvalsh(gram)
        if eigs[0] <= 1e-12 * max(eigs[-1], 1.0):
            raise np.linalg.LinAlgError(
                "normal matrix is singular; use a positive ridge"
            )
    a_hat = np.linalg.solve(gram + lam * np.eye(gram.shape[0]), x @ y.T).T

    u, s, vt = np.linalg.svd(rearrange(a_hat, p1, p2))
    u1, v1 = u[:, 0], vt[0]
    nz = np.nonzero(np.abs(u1) > 1e-14)[0]
    if nz.size and u1[nz[0]] < 0:
        u1, v1 = -u1, -v1
    root = np.sqrt(s[0])
    a2 = mat(root * u1, p2, p2)
    a1 = mat(root * v1, p1, p1)
    return equalize_norms(CoefPair(_truncate_rank(a1, r1), _truncate_rank(a2, r2)))


def _warn_on_gap(sv: np.ndarray, keep: int, what: str):
    if 0 < keep < sv.size:
        top = sv[keep - 1]
        if top > 0 and (top - sv[keep]) / top < GAP_WARN:
            warnings.warn(
                f"nearly tied singular values at the {what} split boundary; "
                "the recovered subspace may be unstable",
                stacklevel=3,
            )


def _orthonormal_range(m: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the numerical column span."""
    if m.shape[1] == 0:
        return m
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    keep = int(np.sum(s > max(1e-12 * s[0] if s.size else 0.0, 1e-14)))
    return u[:, :keep]


def spectral_split(pair: CoefPair, dims: StructuralDims, b: float = 1.0) -> MarcfParams:
    """Split a low-rank coefficient pair into identified parameter blocks.

    For each mode, the rank-r_i SVD of A_i gives response and predictor
    frames U, V.  The specific bases are the leading left singular vectors
    of P_U (I - P_V) and P_V (I - P_U); the common basis consists of the
    leading eigenvectors of the projector sum deflated by both specific
    spans (the deflation is applied symmetrically, which reproduces the
    projector identity exactly on structured input and keeps the output
    identified in general).  D_i is read off by projection, and all blocks
    are scaled to balance b.
    """
    if not (np.isfinite(b) and b > 0):
        raise ValueError("balance scalar must be positive")
    blocks = {}
    for i, a in ((1, pair.A1), (2, pair.A2)):
        p, r, d = dims.mode(i)
        if a.shape != (p, p):
            raise ShapeError(f"A{i} must be {p}x{p}, got {a.shape}")
        if r == 0:
            blocks[i] = (np.zeros((p, 0)), np.zeros((p, 0)), np.zeros((p, 0)),
                         np.zeros((0, 0)))
            continue
        u, s, vt = np.linalg.svd(a)
        if s[r - 1] <= RANK_TOL:
            raise ValueError(
                f"A{i} is numerically rank-deficient at rank {r} "
                f"(sigma_{r} = {s[r - 1]:.3e})"
            )
        u_hat, v_hat = u[:, :r], vt[:r].T
        spec = r - d
        if d == 0:
            # pure reduced-rank case: the SVD frames are the specific bases
            c_t = np.zeros((p, 0))
            r_t, p_t = _fix_sign(u_hat), _fix_sign(v_hat)
        else:
            proj_u = u_hat @ u_hat.T
            proj_v = v_hat @ v_hat.T
            if spec == 0:
                r_t = np.zeros((p, 0))
                p_t = np.zeros((p, 0))
            else:
                ur, sr, _ = np.linalg.svd(proj_u @ (np.eye(p) - proj_v))
                _warn_on_gap(sr, spec, f"mode-{i} response")
                r_t = _fix_sign(ur[:, :spec])
                up, sp_, _ = np.linalg.svd(proj_v @ (np.eye(p) - proj_u))
                _warn_on_gap(sp_, spec, f"mode-{i} predictor")
                p_t = _fix_sign(up[:, :spec])
            w = _orthonormal_range(np.hstack([r_t, p_t]))
            deflate = np.eye(p) - w @ w.T
            h = deflate @ (proj_u + proj_v) @ deflate
            evals, evecs = np.linalg.eigh(h)
            order = np.argsort(evals)[::-1]
            c_t = _fix_sign(evecs[:, order[:d]])
        u_frame = np.hstack([c_t, r_t])
        v_frame = np.hstack([c_t, p_t])
        d_t = u_frame.T @ a @ v_frame
        blocks[i] = (b * c_t, b * r_t, b * p_t, d_t / b ** 2)
    return MarcfParams(*blocks[1], *blocks[2], b=b)
