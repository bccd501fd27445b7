"""Dense-matrix building blocks: vectorization, Kronecker rearrangement,
subspace projectors, canonical angles, and seeded randomness.

All vectorization is column-major (Fortran order), so that
``vec(A1 @ Y @ A2.T) == kron(A2, A1) @ vec(Y)``.  Everything here is a pure
function of its inputs; the only stateful object is :class:`RngHandle`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ORTHO_TOL = 1e-10


class ShapeError(ValueError):
    """Incompatible matrix or series dimensions."""


@dataclass(frozen=True)
class MatrixSeries:
    """An ordered sequence Y_0..Y_T of equally shaped real matrices.

    ``data`` is stored as a (T+1, p1, p2) float array.  ``length`` is T,
    the number of transitions, not the number of observations.
    """

    data: np.ndarray
    row_labels: list[str] | None = None
    col_labels: list[str] | None = None

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=float)
        if arr.ndim != 3 or arr.shape[0] < 1:
            raise ShapeError(f"series must be (T+1, p1, p2), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("series contains non-finite entries")
        object.__setattr__(self, "data", arr)
        if self.row_labels is not None and len(self.row_labels) != arr.shape[1]:
            raise ShapeError("row_labels length does not match p1")
        if self.col_labels is not None and len(self.col_labels) != arr.shape[2]:
            raise ShapeError("col_labels length does not match p2")

    @property
    def p1(self) -> int:
        return self.data.shape[1]

    @property
    def p2(self) -> int:
        return self.data.shape[2]

    @property
    def length(self) -> int:
        """Number of transitions T (observations are indexed 0..T)."""
        return self.data.shape[0] - 1

    def __len__(self) -> int:
        return self.data.shape[0]

    def __getitem__(self, t: int) -> np.ndarray:
        return self.data[t]


@dataclass
class RngHandle:
    """Seeded random stream (PCG64).

    Identical seed gives an identical draw sequence within one build of this
    package; bit-exactness across numpy versions is not promised.  A handle
    is single-owner: concurrent tasks should each use :meth:`derive` with a
    distinct index instead of sharing one handle.
    """

    seed: int
    _spawn_key: tuple[int, ...] = ()
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        ss = np.random.SeedSequence(self.seed, spawn_key=self._spawn_key)
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def derive(self, index: int) -> "RngHandle":
        """Independent child stream keyed by (seed, existing key, index)."""
        return RngHandle(self.seed, self._spawn_key + (int(index),))


def vec(m: np.ndarray) -> np.ndarray:
    """Column-major stacking: out[j*p + i] = m[i, j] (0-based)."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ShapeError("vec expects a 2-D array")
    return m.reshape(-1, order="F")


def mat(v: np.ndarray, p: int, q: int) -> np.ndarray:
    """Inverse of :func:`vec`: reshape a pq-vector to p x q, column-major."""
    v = np.asarray(v, dtype=float).ravel()
    if v.size != p * q:
        raise ShapeError(f"vector of length {v.size} cannot fill a {p}x{q} matrix")
    return v.reshape((p, q), order="F")


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product a (x) b."""
    return np.kron(np.asarray(a, dtype=float), np.asarray(b, dtype=float))


def rearrange(a: np.ndarray, p1: int, p2: int) -> np.ndarray:
    """Permute a (p1*p2) x (p1*p2) matrix into the (p2^2) x (p1^2) layout in
    which a Kronecker product becomes rank one.

    If ``a = kron(a2, a1)`` with a2 of order p2 and a1 of order p1, the result
    is exactly ``vec(a2) @ vec(a1).T``.  The map is a linear isometry: it
    moves entry a[i2*p1 + i1, j2*p1 + j1] to row j2*p2 + i2, column j1*p1 + i1.
    """
    a = np.asarray(a, dtype=float)
    n = p1 * p2
    if a.shape != (n, n):
        raise ShapeError(f"expected a {n}x{n} matrix for p1={p1}, p2={p2}, got {a.shape}")
    # axes of the blocked view are (i2, i1, j2, j1)
    return a.reshape(p2, p1, p2, p1).transpose(2, 0, 3, 1).reshape(p2 * p2, p1 * p1)


def inverse_rearrange(r: np.ndarray, p1: int, p2: int) -> np.ndarray:
    """Exact inverse of :func:`rearrange`."""
    r = np.asarray(r, dtype=float)
    if r.shape != (p2 * p2, p1 * p1):
        raise ShapeError(
            f"expected a {p2 * p2}x{p1 * p1} matrix for p1={p1}, p2={p2}, got {r.shape}"
        )
    n = p1 * p2
    return r.reshape(p2, p2, p1, p1).transpose(1, 3, 0, 2).reshape(n, n)


def _check_orthonormal(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D")
    k = m.shape[1]
    if k == 0:
        return m
    gram_err = np.linalg.norm(m.T @ m - np.eye(k))
    if gram_err > ORTHO_TOL:
        raise ValueError(
            f"{name} is not orthonormal (||M'M - I|| = {gram_err:.3e} > {ORTHO_TOL})"
        )
    return m


def projector(m: np.ndarray) -> np.ndarray:
    """Orthogonal projector M @ M.T onto the column span of an orthonormal M.

    Inputs beyond the 1e-10 orthonormality tolerance are rejected rather
    than silently re-orthonormalized.
    """
    m = _check_orthonormal(m, "projector input")
    return m @ m.T


def projector_complement(m: np.ndarray) -> np.ndarray:
    """I - M @ M.T for orthonormal M."""
    m = _check_orthonormal(m, "projector input")
    return np.eye(m.shape[0]) - m @ m.T


def sin_theta_max(r: np.ndarray, p: np.ndarray) -> float:
    """Sine of the smallest canonical angle between two orthonormal frames.

    Returns sqrt(1 - s1^2) where s1 is the largest singular value of R'P.
    Equals 0 for identical subspaces and 1 for orthogonal ones.
    """
    r = _check_orthonormal(r, "first frame")
    p = _check_orthonormal(p, "second frame")
    if r.shape != p.shape:
        raise ShapeError(f"frames must share a shape, got {r.shape} vs {p.shape}")
    if r.shape[1] == 0:
        raise ValueError("sin theta is undefined for zero-dimensional subspaces")
    s1 = np.linalg.svd(r.T @ p, compute_uv=False)[0]
    return float(np.sqrt(max(0.0, 1.0 - min(s1, 1.0) ** 2)))


def random_orthonormal(rng: RngHandle | np.random.Generator, p: int, k: int) -> np.ndarray:
    """p x k orthonormal matrix from QR of an i.i.d. standard normal matrix.

    The QR sign is fixed (nonnegative triangular diagonal) so the draw is a
    deterministic function of the stream state.
    """
    if k > p:
        raise ShapeError(f"cannot draw {k} orthonormal columns in dimension {p}")
    gen = rng.generator if isinstance(rng, RngHandle) else rng
    if k == 0:
        return np.zeros((p, 0))
    q, r = np.linalg.qr(gen.standard_normal((p, k)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def orthonormal_complement_of(
    c: np.ndarray, m: np.ndarray, tol: float = 1e-12
) -> np.ndarray:
    """Orthonormalize the projection of ``m`` onto the complement of span(c).

    QR of (I - C C') M with the same sign convention as
    :func:`random_orthonormal`.  Raises if the projected columns are
    numerically dependent.
    """
    c = np.asarray(c, dtype=float)
    m = np.asarray(m, dtype=float)
    if m.shape[1] == 0:
        return np.zeros((m.shape[0], 0))
    w = m - c @ (c.T @ m) if c.shape[1] else m.copy()
    q, r = np.linalg.qr(w)
    diag = np.diag(r)
    if np.min(np.abs(diag)) <= tol * max(1.0, np.max(np.abs(diag))):
        raise ValueError("columns are numerically dependent after projection")
    signs = np.sign(diag)
    signs[signs == 0] = 1.0
    return q * signs
