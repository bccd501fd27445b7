"""Model parameterization for matrix autoregression with common factors.

A coefficient pair (A1, A2) acts on a p1 x p2 series through
Y_t = A1 @ Y_{t-1} @ A2.T.  Each A_i factors as

    A_i = [C_i R_i] D_i [C_i P_i].T

where C_i spans the subspace common to predictor and response, R_i the
response-specific part, P_i the predictor-specific part, and D_i mixes them.
The decomposition is fixed only up to per-block orthogonal rotations and a
balance scale b with [C_i R_i].T [C_i R_i] = b^2 I; this module provides the
assembly, the rebalancing onto that constraint set, and the rotation-minimized
distance between two parameter sets.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import ShapeError, RngHandle, random_orthonormal

IDENT_TOL = 1e-6


@dataclass(frozen=True)
class StructuralDims:
    """Ambient dimensions, ranks, and common-subspace dimensions."""

    p1: int
    p2: int
    r1: int
    r2: int
    d1: int
    d2: int

    def __post_init__(self):
        for p, r, d, i in ((self.p1, self.r1, self.d1, 1), (self.p2, self.r2, self.d2, 2)):
            if not (0 <= d <= r <= p):
                raise ShapeError(f"need 0 <= d{i} <= r{i} <= p{i}, got d={d}, r={r}, p={p}")

    def mode(self, i: int) -> tuple[int, int, int]:
        """(p, r, d) for mode i in {1, 2}."""
        if i == 1:
            return self.p1, self.r1, self.d1
        if i == 2:
            return self.p2, self.r2, self.d2
        raise ValueError("mode index must be 1 or 2")


@dataclass(frozen=True)
class CoefPair:
    """The bilinear coefficient matrices (A1, A2)."""

    A1: np.ndarray
    A2: np.ndarray

    def __post_init__(self):
        for name, a in (("A1", self.A1), ("A2", self.A2)):
            a = np.asarray(a, dtype=float)
            if a.ndim != 2 or a.shape[0] != a.shape[1]:
                raise ShapeError(f"{name} must be square, got {a.shape}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, a)


@dataclass(frozen=True)
class MarcfParams:
    """Parameter blocks {C_i, R_i, P_i, D_i} for i = 1, 2 plus the balance b.

    Zero-width blocks are legal: C_i has zero columns when d_i = 0, and R_i,
    P_i have zero columns when d_i = r_i.  Shapes must be mutually consistent
    (D_i is r_i x r_i with r_i = d_i + width(R_i)).
    """

    C1: np.ndarray
    R1: np.ndarray
    P1: np.ndarray
    D1: np.ndarray
    C2: np.ndarray
    R2: np.ndarray
    P2: np.ndarray
    D2: np.ndarray
    b: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.b) and self.b > 0):
            raise ValueError(f"balance scalar must be positive, got {self.b}")
        for i in (1, 2):
            c, r, p, d = self.mode(i)
            if c.ndim != 2 or r.ndim != 2 or p.ndim != 2 or d.ndim != 2:
                raise ShapeError("parameter blocks must be 2-D arrays")
            if r.shape != p.shape or c.shape[0] != r.shape[0]:
                raise ShapeError(f"inconsistent block shapes in mode {i}")
            ri = c.shape[1] + r.shape[1]
            if d.shape != (ri, ri):
                raise ShapeError(f"D{i} must be {ri}x{ri}, got {d.shape}")

    def mode(self, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(C, R, P, D) for mode i in {1, 2}."""
        if i == 1:
            return self.C1, self.R1, self.P1, self.D1
        if i == 2:
            return self.C2, self.R2, self.P2, self.D2
        raise ValueError("mode index must be 1 or 2")

    @property
    def dims(self) -> StructuralDims:
        return StructuralDims(
            p1=self.C1.shape[0], p2=self.C2.shape[0],
            r1=self.C1.shape[1] + self.R1.shape[1],
            r2=self.C2.shape[1] + self.R2.shape[1],
            d1=self.C1.shape[1], d2=self.C2.shape[1],
        )

    def response_basis(self, i: int) -> np.ndarray:
        """[C_i R_i], the stacked response-side basis."""
        c, r, _, _ = self.mode(i)
        return np.hstack([c, r])

    def predictor_basis(self, i: int) -> np.ndarray:
        """[C_i P_i], the stacked predictor-side basis."""
        c, _, p, _ = self.mode(i)
        return np.hstack([c, p])

    def blocks(self) -> tuple[np.ndarray, ...]:
        return (self.C1, self.R1, self.P1, self.D1, self.C2, self.R2, self.P2, self.D2)


def zeros_like_params(dims: StructuralDims, b: float = 1.0) -> MarcfParams:
    """All-zero parameter blocks with the given shapes."""
    def blk(p, r, d):
        return np.zeros((p, d)), np.zeros((p, r - d)), np.zeros((p, r - d)), np.zeros((r, r))

    c1, r1, p1b, d1 = blk(*dims.mode(1))
    c2, r2, p2b, d2 = blk(*dims.mode(2))
    return MarcfParams(c1, r1, p1b, d1, c2, r2, p2b, d2, b=b)


def assemble(theta: MarcfParams) -> CoefPair:
    """Form A_i = [C_i R_i] D_i [C_i P_i].T for both modes."""
    out = []
    for i in (1, 2):
        u = theta.response_basis(i)
        v = theta.predictor_basis(i)
        _, _, _, d = theta.mode(i)
        out.append(u @ d @ v.T)
    return CoefPair(out[0], out[1])


def df_count(dims: StructuralDims) -> int:
    """Free-parameter count p1(2r1-d1) + p2(2r2-d2) + r1^2 + r2^2."""
    return (dims.p1 * (2 * dims.r1 - dims.d1) + dims.p2 * (2 * dims.r2 - dims.d2)
            + dims.r1 ** 2 + dims.r2 ** 2)


def spectral_radius_product(c: CoefPair) -> float:
    """rho(A1) * rho(A2); < 1 guarantees weak stationarity of the recursion."""
    try:
        rho1 = np.max(np.abs(np.linalg.eigvals(c.A1))) if c.A1.size else 0.0
        rho2 = np.max(np.abs(np.linalg.eigvals(c.A2))) if c.A2.size else 0.0
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"eigenvalue computation failed: {exc}") from exc
    return float(rho1 * rho2)


def identification_residual(theta: MarcfParams) -> float:
    """Largest deviation of [C R].'[C R] and [C P].'[C P] from b^2 I."""
    worst = 0.0
    for i in (1, 2):
        for basis in (theta.response_basis(i), theta.predictor_basis(i)):
            k = basis.shape[1]
            if k == 0:
                continue
            dev = np.linalg.norm(basis.T @ basis - theta.b ** 2 * np.eye(k))
            worst = max(worst, dev)
    return worst


def is_identified(theta: MarcfParams, tol: float = IDENT_TOL) -> bool:
    return identification_residual(theta) <= tol


def _qr_posdiag(w: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR with nonnegative triangular diagonal; rejects rank deficiency."""
    q, r = np.linalg.qr(w)
    diag = np.diag(r)
    if w.shape[1] and np.min(np.abs(diag)) <= 1e-12 * max(1.0, np.max(np.abs(diag))):
        raise ValueError(f"rank-deficient {what}: cannot rebalance")
    signs = np.sign(diag)
    signs[signs == 0] = 1.0
    return q * signs, r * signs[:, None]


def rebalance(theta: MarcfParams, b_target: float = 1.0, equalize: bool = True) -> MarcfParams:
    """Return an equivalent parameter set satisfying the balance constraints.

    Per mode: orthonormalize C_i, project R_i and P_i onto the complement of
    span(C_i) and orthonormalize, absorb every change of basis into D_i, then
    scale the bases by b_target and D_i by the compensating factor.  The
    assembled A_i are preserved exactly.  With ``equalize`` the pair is
    additionally rescaled as (c A1, A2 / c) so both Frobenius norms equal
    their geometric mean; this leaves kron(A2, A1) unchanged.
    """
    if not (np.isfinite(b_target) and b_target > 0):
        raise ValueError("b_target must be positive")
    new = {}
    for i in (1, 2):
        c, r, p, d = theta.mode(i)
        di = c.shape[1]
        if di:
            c_tilde, t_c = _qr_posdiag(c, f"C{i}")
        else:
            c_tilde, t_c = np.zeros((c.shape[0], 0)), np.zeros((0, 0))
        r_proj = r - c_tilde @ (c_tilde.T @ r) if di else r
        p_proj = p - c_tilde @ (c_tilde.T @ p) if di else p
        r_tilde, t_r = _qr_posdiag(r_proj, f"[C{i} R{i}]")
        p_tilde, t_p = _qr_posdiag(p_proj, f"[C{i} P{i}]")
        # [C R] = [c_tilde r_tilde] @ K_u with K_u block upper triangular
        k_u = np.block([[t_c, c_tilde.T @ r], [np.zeros((r.shape[1], di)), t_r]])
        k_v = np.block([[t_c, c_tilde.T @ p], [np.zeros((p.shape[1], di)), t_p]])
        d_new = k_u @ d @ k_v.T / b_target ** 2
        new[i] = (b_target * c_tilde, b_target * r_tilde, b_target * p_tilde, d_new)

    out = MarcfParams(*new[1], *new[2], b=b_target)
    if equalize:
        pair = assemble(out)
        n1, n2 = np.linalg.norm(pair.A1), np.linalg.norm(pair.A2)
        if n1 > 0 and n2 > 0:
            scale = np.sqrt(n2 / n1)
            out = replace(out, D1=out.D1 * scale, D2=out.D2 / scale)
    return out


def signal_strength(theta: MarcfParams) -> float:
    """sqrt of ||kron(A2, A1)||_F; equals each ||A_i||_F once norms are equal."""
    pair = assemble(theta)
    return float(np.sqrt(np.linalg.norm(pair.A1) * np.linalg.norm(pair.A2)))


def rotate(theta: MarcfParams, qs1, qs2) -> MarcfParams:
    """Apply per-mode rotations (Q1, Q2, Q3) with D compensated.

    Produces an equivalent parameter set: assembled coefficients are
    unchanged when the Q's are orthogonal.
    """
    new = {}
    for i, (q1, q2, q3) in ((1, qs1), (2, qs2)):
        c, r, p, d = theta.mode(i)
        left = _blockdiag(q1, q2)
        right = _blockdiag(q1, q3)
        new[i] = (c @ q1, r @ q2, p @ q3, left.T @ d @ right)
    return MarcfParams(*new[1], *new[2], b=theta.b)


def _blockdiag(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0] + b.shape[0], a.shape[1] + b.shape[1]))
    out[: a.shape[0], : a.shape[1]] = a
    out[a.shape[0]:, a.shape[1]:] = b
    return out


def _procrustes(m: np.ndarray) -> np.ndarray:
    """argmax_{Q orthogonal} tr(Q'M) via the SVD of M."""
    if m.shape[0] == 0:
        return np.zeros((0, 0))
    u, _, vt = np.linalg.svd(m)
    return u @ vt


def _mode_distance_sq(ca, ra, pa, da, cb, rb, pb, db, max_sweeps: int = 100) -> float:
    """min over (Q1, Q2, Q3) of the four-block squared-Frobenius mismatch.

    Block-coordinate descent: each rotation solves an orthogonal Procrustes
    subproblem given the others (the Q1 subproblem couples with itself
    through the top-left D block, so its update is accepted only when it
    does not increase the objective).  Multiple deterministic starts guard
    against local minima.
    """
    d = ca.shape[1]
    s = ra.shape[1]
    if d == 0 and s == 0:
        return 0.0
    d11b, d12b = db[:d, :d], db[:d, d:]
    d21b, d22b = db[d:, :d], db[d:, d:]
    d11a, d12a = da[:d, :d], da[:d, d:]
    d21a, d22a = da[d:, :d], da[d:, d:]

    def objective(q1, q2, q3):
        m = np.block([[q1.T @ d11b @ q1, q1.T @ d12b @ q3],
                      [q2.T @ d21b @ q1, q2.T @ d22b @ q3]])
        val = np.linalg.norm(da - m) ** 2
        val += np.linalg.norm(ca - cb @ q1) ** 2
        val += np.linalg.norm(ra - rb @ q2) ** 2
        val += np.linalg.norm(pa - pb @ q3) ** 2
        return val

    def descend(q1, q2, q3):
        best = objective(q1, q2, q3)
        for _ in range(max_sweeps):
            if s:
                q2 = _procrustes(rb.T @ ra + d21b @ q1 @ d21a.T + d22b @ q3 @ d22a.T)
                q3 = _procrustes(pb.T @ pa + d12b.T @ q1 @ d12a + d22b.T @ q2 @ d22a)
            if d:
                cand = _procrustes(cb.T @ ca + d12b @ q3 @ d12a.T + d21b.T @ q2 @ d21a
                                   + d11b @ q1 @ d11a.T + d11b.T @ q1 @ d11a)
                if objective(cand, q2, q3) <= objective(q1, q2, q3):
                    q1 = cand
            val = objective(q1, q2, q3)
            if best - val < 1e-12:
                best = min(best, val)
                break
            best = val
        return best

    starts = [
        (_procrustes(cb.T @ ca), _procrustes(rb.T @ ra), _procrustes(pb.T @ pa)),
        (np.eye(d), np.eye(s), np.eye(s)),
    ]
    if d <= 1 and s <= 1:
        # O(1)^3 is a sign group; seed every element of it
        sign_sets = [
            [np.full((1, 1), sg) for sg in (1.0, -1.0)] if width else [np.zeros((0, 0))]
            for width in (d, s, s)
        ]
        for q1 in sign_sets[0]:
            for q2 in sign_sets[1]:
                for q3 in sign_sets[2]:
                    starts.append((q1, q2, q3))
    else:
        rng = RngHandle(20240)
        for k in range(4):
            child = rng.derive(k).generator
            starts.append((
                random_orthonormal(child, d, d) if d else np.zeros((0, 0)),
                random_orthonormal(child, s, s) if s else np.zeros((0, 0)),
                random_orthonormal(child, s, s) if s else np.zeros((0, 0)),
            ))
    return min(descend(*st) for st in starts)


def theta_distance(a: MarcfParams, b: MarcfParams) -> float:
    """Rotation-invariant distance between two identified parameter sets.

    Minimizes the summed squared Frobenius mismatch of all blocks over
    per-mode rotations (Q1, Q2, Q3) applied to ``b``; zero exactly when the
    two sets are rotation-equivalent.  Requires identical structural
    dimensions and equal balance scalars.
    """
    if a.dims != b.dims:
        raise ShapeError(f"structural dimensions differ: {a.dims} vs {b.dims}")
    if not np.isclose(a.b, b.b, rtol=1e-8, atol=1e-12):
        raise ValueError(f"balance scalars differ: {a.b} vs {b.b}")
    total = 0.0
    for i in (1, 2):
        total += _mode_distance_sq(*a.mode(i), *b.mode(i))
    return float(np.sqrt(max(total, 0.0)))
