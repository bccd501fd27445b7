"""Data-generating processes with rejection sampling.

Two generators are provided: a common-factor autoregression truth (random
orthonormal blocks with a controlled separation between the specific
subspaces) and a dynamic matrix factor model whose implied autoregressive
coefficients have fully shared predictor/response subspaces.  Both reject
draws violating the stationarity condition rho(A1) rho(A2) < 1 and, where
specific subspaces exist, draws whose smallest canonical angle between the
response- and predictor-specific bases is too small.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import MatrixSeries, RngHandle, orthonormal_complement_of, random_orthonormal, sin_theta_max
from .model import CoefPair, MarcfParams, StructuralDims, assemble, spectral_radius_product

KINDS = ("marcf", "dynamic-mfm")


@dataclass(frozen=True)
class DgpSpec:
    """Shape, sample size, rejection thresholds, and seed for one draw."""

    dims: StructuralDims
    T: int
    kind: str = "marcf"
    noise: str = "gaussian-identity"
    sin_theta_min: float = 0.8
    max_rejects: int = 1000
    seed: int = 0
    burn_in: int = 200

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.noise != "gaussian-identity":
            raise ValueError("only gaussian-identity noise is supported")
        if not (0.0 <= self.sin_theta_min <= 1.0):
            raise ValueError("sin_theta_min must lie in [0, 1]")


@dataclass(frozen=True)
class DmfmTruth:
    """Loadings and factor dynamics of a dynamic matrix factor model."""

    lam1: np.ndarray
    lam2: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    factors: np.ndarray = field(repr=False)

    @property
    def implied_pair(self) -> CoefPair:
        """The autoregressive coefficients Lambda_i B_i Lambda_i'."""
        return CoefPair(self.lam1 @ self.B1 @ self.lam1.T,
                        self.lam2 @ self.B2 @ self.lam2.T)


def _random_mixing(rng: np.random.Generator, r: int, d: int) -> np.ndarray:
    """D = O1' S O2 with diagonal S; entries U(0.8, 1) when the subspaces
    fully overlap (r = d), U(0.9, 1.1) otherwise."""
    if r == 0:
        return np.zeros((0, 0))
    lo, hi = (0.8, 1.0) if r == d else (0.9, 1.1)
    s = rng.uniform(lo, hi, size=r)
    o1 = random_orthonormal(rng, r, r)
    o2 = random_orthonormal(rng, r, r)
    return o1.T @ (s[:, None] * o2)


def burn_in_recursion(
    a1: np.ndarray,
    a2: np.ndarray,
    T: int,
    burn: int,
    rng: RngHandle | np.random.Generator,
    noise_scale: float = 1.0,
    start: np.ndarray | None = None,
) -> MatrixSeries:
    """Run Y_t = A1 Y_{t-1} A2' + E_t and emit Y_0..Y_T.

    The recursion starts from ``start`` (zeros by default) and discards
    ``burn`` steps before emitting Y_0.  ``noise_scale`` multiplies the
    i.i.d. standard normal innovations; zero gives the deterministic
    recursion.
    """
    gen = rng.generator if isinstance(rng, RngHandle) else rng
    p1, p2 = a1.shape[0], a2.shape[0]
    state = np.zeros((p1, p2)) if start is None else np.array(start, dtype=float)
    if state.shape != (p1, p2):
        raise ValueError(f"start must be ({p1}, {p2}), got {state.shape}")

    def advance(y):
        nxt = (a1 @ y) @ a2.T
        if noise_scale:
            nxt = nxt + noise_scale * gen.standard_normal((p1, p2))
        return nxt

    for _ in range(burn):
        state = advance(state)
    out = np.empty((T + 1, p1, p2))
    out[0] = state
    for t in range(1, T + 1):
        state = advance(state)
        out[t] = state
    return MatrixSeries(out)


def gen_marcf_truth(
    spec: DgpSpec, rng: RngHandle | np.random.Generator | None = None
) -> tuple[MarcfParams, MatrixSeries]:
    """Draw an identified stationary truth and a series generated from it.

    Rejects candidates whose specific subspaces are separated by less than
    ``sin_theta_min`` (checked on both modes when d_i < r_i) or whose
    spectral-radius product reaches 1.  The returned parameters carry
    balance b = 1 with equalized coefficient norms.
    """
    gen = _resolve_rng(spec, rng)
    dims = spec.dims
    for _ in range(spec.max_rejects):
        parts = {}
        ok = True
        for i in (1, 2):
            p, r, d = dims.mode(i)
            c = random_orthonormal(gen, p, d)
            spec_cols = r - d
            rmat = orthonormal_complement_of(c, gen.standard_normal((p, spec_cols)))
            pmat = orthonormal_complement_of(c, gen.standard_normal((p, spec_cols)))
            if spec_cols and sin_theta_max(rmat, pmat) < spec.sin_theta_min:
                ok = False
                break
            parts[i] = (c, rmat, pmat, _random_mixing(gen, r, d))
        if not ok:
            continue
        theta = MarcfParams(*parts[1], *parts[2], b=1.0)
        pair = assemble(theta)
        n1, n2 = np.linalg.norm(pair.A1), np.linalg.norm(pair.A2)
        if n1 > 0 and n2 > 0:
            # absorb the norm equalization into the mixing matrices
            scale = np.sqrt(n2 / n1)
            theta = MarcfParams(parts[1][0], parts[1][1], parts[1][2], parts[1][3] * scale,
                                parts[2][0], parts[2][1], parts[2][2], parts[2][3] / scale,
                                b=1.0)
            pair = assemble(theta)
        if spectral_radius_product(pair) >= 1.0:
            continue
        series = burn_in_recursion(pair.A1, pair.A2, spec.T, spec.burn_in, gen)
        return theta, series
    raise RuntimeError(f"no admissible truth found in {spec.max_rejects} draws")


def gen_dmfm_truth(
    spec: DgpSpec, rng: RngHandle | np.random.Generator | None = None
) -> tuple[DmfmTruth, MatrixSeries]:
    """Draw a dynamic matrix factor model truth and its observed series.

    Factors follow F_t = B1 F_{t-1} B2' + xi_t; observations are
    Y_t = Lam1 F_t Lam2' + W_t where W_t = E_t - Lam1 Lam1' E_t Lam2 Lam2'
    removes the noise component inside the loading spaces, so
    Lam1' Y_t Lam2 = F_t exactly.
    """
    gen = _resolve_rng(spec, rng)
    dims = spec.dims
    p1, p2, r1, r2 = dims.p1, dims.p2, dims.r1, dims.r2
    for _ in range(spec.max_rejects):
        lam1 = random_orthonormal(gen, p1, r1)
        lam2 = random_orthonormal(gen, p2, r2)
        b1 = _random_mixing(gen, r1, r1)
        b2 = _random_mixing(gen, r2, r2)
        rho1 = np.max(np.abs(np.linalg.eigvals(b1))) if r1 else 0.0
        rho2 = np.max(np.abs(np.linalg.eigvals(b2))) if r2 else 0.0
        if rho1 * rho2 >= 1.0:
            continue
        f = np.zeros((r1, r2))
        for _ in range(spec.burn_in):
            f = b1 @ f @ b2.T + gen.standard_normal((r1, r2))
        factors = np.empty((spec.T + 1, r1, r2))
        factors[0] = f
        for t in range(1, spec.T + 1):
            f = b1 @ f @ b2.T + gen.standard_normal((r1, r2))
            factors[t] = f
        noise = gen.standard_normal((spec.T + 1, p1, p2))
        inside = np.matmul(lam1 @ lam1.T, noise) @ (lam2 @ lam2.T)
        w = noise - inside
        obs = np.matmul(lam1, factors) @ lam2.T + w
        truth = DmfmTruth(lam1, lam2, b1, b2, factors)
        return truth, MatrixSeries(obs)
    raise RuntimeError(f"no admissible truth found in {spec.max_rejects} draws")


def generate(spec: DgpSpec, rng: RngHandle | np.random.Generator | None = None):
    """Dispatch on ``spec.kind``."""
    if spec.kind == "marcf":
        return gen_marcf_truth(spec, rng)
    return gen_dmfm_truth(spec, rng)


def _resolve_rng(spec: DgpSpec, rng) -> np.random.Generator:
    if rng is None:
        return RngHandle(spec.seed).generator
    return rng.generator if isinstance(rng, RngHandle) else rng
