"""
Dense linear algebra backing the update transforms and their property checks.

All functions are pure: they never mutate their arguments and keep no shared
state, so they can be called from any number of threads. Matrices are plain
2-D float64 numpy arrays; `as_matrix` enforces that contract at the edges.
"""

import logging
from functools import lru_cache
from typing import Tuple

import numpy as np

from app.core.exceptions import (
    ConvergenceError,
    DimensionTooLargeError,
    NonFiniteMatrixError,
    ShapeMismatchError,
    ZeroMatrixError,
)
from app.models.schemas import SvdResult

logger = logging.getLogger(__name__)

RANK_RTOL = 1e-10
SVD_MAX_DIM = 512
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 60
POWER_TOL = 1e-10
REPORT_POWER_TOL = 1e-6
POWER_MAX_ITER = 10_000
POWER_SEED = 0
HEAVY_TAIL_CLIP = 50.0

DISTRIBUTIONS = ("gaussian", "uniform", "heavy-tail")


def as_matrix(x) -> np.ndarray:
    """Coerce to a finite 2-D float64 array; 1-D input becomes a 1 x n row"""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2 or m.shape[0] == 0 or m.shape[1] == 0:
        raise ShapeMismatchError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise NonFiniteMatrixError("matrix has NaN or Inf entries")
    return m


def frobenius_norm(m: np.ndarray) -> float:
    return float(np.linalg.norm(as_matrix(m)))


def spectral_norm(
    m: np.ndarray,
    tol: float = POWER_TOL,
    max_iter: int = POWER_MAX_ITER,
    strict: bool = True,
) -> float:
    """
    Largest singular value by power iteration on m^T m.

    Converged once the eigen-residual ||m^T m v - lambda v|| is at most
    tol * lambda, lambda = ||m v||^2; close sigma_1 and sigma_2 slow it down
    but do not stop it early. When max_iter runs out, strict mode raises
    ConvergenceError (carrying the last estimate); otherwise the estimate is
    returned with a warning, which is good enough for logging and timing.
    """
    m = as_matrix(m)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not m.any():
        return 0.0

    v = np.random.default_rng(POWER_SEED).standard_normal(m.shape[1])
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(max_iter):
        u = m @ v
        estimate = float(np.linalg.norm(u))
        w = m.T @ u
        w_norm = np.linalg.norm(w)
        if w_norm == 0.0:
            # Start vector fell in the null space; restart on the heaviest column
            v = np.zeros(m.shape[1])
            v[int(np.argmax(np.linalg.norm(m, axis=0)))] = 1.0
            continue
        eigenvalue = estimate * estimate
        if np.linalg.norm(w - eigenvalue * v) <= tol * eigenvalue:
            return estimate
        v = w / w_norm

    message = f"power iteration did not converge in {max_iter} iterations (estimate {estimate:.6g})"
    if strict:
        raise ConvergenceError(message, estimate=estimate, iterations=max_iter)
    logger.warning(message)
    return estimate


def estimate_spectral_norm(m: np.ndarray, exact_max_dim: int = 64) -> float:
    """Report-grade spectral norm: Jacobi for small matrices, lenient power iteration above"""
    m = as_matrix(m)
    if not m.any():
        return 0.0
    if min(m.shape) <= exact_max_dim:
        return float(svd_jacobi(m).sigma[0])
    return spectral_norm(m, tol=REPORT_POWER_TOL, max_iter=1_000, strict=False)


@lru_cache(maxsize=64)
def _round_robin_pairs(n: int) -> Tuple[Tuple[np.ndarray, np.ndarray], ...]:
    """Tournament schedule: n - 1 rounds of disjoint column pairs covering every pair once"""
    players = list(range(n)) + ([-1] if n % 2 else [])
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        pairs = [(players[i], players[size - 1 - i]) for i in range(size // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p >= 0 and q >= 0]
        if pairs:
            p_idx = np.array([p for p, _ in pairs])
            q_idx = np.array([q for _, q in pairs])
            p_idx.setflags(write=False)
            q_idx.setflags(write=False)
            rounds.append((p_idx, q_idx))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def _complete_basis(u: np.ndarray, kept: int) -> np.ndarray:
    """Replace columns kept: with an orthonormal completion of the first kept columns"""
    rows, k = u.shape
    q, _ = np.linalg.qr(np.hstack([u[:, :kept], np.eye(rows)]))
    completed = u.copy()
    completed[:, kept:] = q[:, kept:k]
    return completed


def svd_jacobi(
    m: np.ndarray,
    tol: float = JACOBI_TOL,
    max_sweeps: int = JACOBI_MAX_SWEEPS,
) -> SvdResult:
    """
    Thin SVD by one-sided (Hestenes) Jacobi rotations.

    Each sweep visits every column pair once, in round-robin order so that the
    pairs of one round are disjoint and can be rotated together. Sweeps stop
    when no pair has relative correlation above tol, or after max_sweeps.
    Wide inputs are handled through their transpose.
    """
    m = as_matrix(m)
    rows, cols = m.shape
    if min(rows, cols) > SVD_MAX_DIM:
        raise DimensionTooLargeError(
            f"Jacobi SVD oracle is capped at min(rows, cols) <= {SVD_MAX_DIM}, got {m.shape}"
        )
    if rows < cols:
        flipped = svd_jacobi(m.T, tol=tol, max_sweeps=max_sweeps)
        return SvdResult(u=flipped.v, sigma=flipped.sigma, v=flipped.u)

    a = m.copy()
    v = np.eye(cols)
    rounds = _round_robin_pairs(cols)

    for _ in range(max_sweeps):
        rotated = False
        for p_all, q_all in rounds:
            ap = a[:, p_all]
            aq = a[:, q_all]
            alpha = np.einsum("ij,ij->j", ap, ap)
            beta = np.einsum("ij,ij->j", aq, aq)
            gamma = np.einsum("ij,ij->j", ap, aq)
            active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if not active.any():
                continue
            rotated = True

            p, q = p_all[active], q_all[active]
            ap, aq = ap[:, active], aq[:, active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            with np.errstate(over="ignore"):
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.where(zeta >= 0.0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t

            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
            vp = v[:, p]
            vq = v[:, q]
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        if not rotated:
            break
    else:
        logger.warning(f"Jacobi SVD hit {max_sweeps} sweeps on a {rows}x{cols} matrix before tolerance {tol}")

    sigma = np.linalg.norm(a, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma, a, v = sigma[order], a[:, order], v[:, order]

    threshold = np.finfo(np.float64).eps * sigma[0]
    kept = int(np.sum(sigma > threshold)) if sigma[0] > 0.0 else 0
    u = np.zeros_like(a)
    u[:, :kept] = a[:, :kept] / sigma[:kept]
    if kept < cols:
        u = _complete_basis(u, kept)
    return SvdResult(u=u, sigma=sigma, v=v)


def _retained(sigma: np.ndarray, rtol: float) -> int:
    return int(np.sum(sigma > rtol * sigma[0]))


def numerical_rank(m: np.ndarray, rtol: float = RANK_RTOL) -> int:
    """Number of singular values above rtol * sigma_1"""
    sigma = svd_jacobi(m).sigma
    if sigma[0] == 0.0:
        return 0
    return _retained(sigma, rtol)


def polar_factor(m: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """Q = U V^T over the singular triples above rtol * sigma_1"""
    m = as_matrix(m)
    if not m.any():
        raise ZeroMatrixError("polar factor is undefined for the zero matrix")
    svd = svd_jacobi(m)
    r = _retained(svd.sigma, rtol)
    return svd.u[:, :r] @ svd.v[:, :r].T


def alpha_scale(g: np.ndarray, rtol: float = RANK_RTOL) -> float:
    """||g||_F / sqrt(rank g), the external scale an orthogonalized step drops"""
    g = as_matrix(g)
    if not g.any():
        raise ZeroMatrixError("alpha scale is undefined for the zero matrix")
    return frobenius_norm(g) / float(np.sqrt(numerical_rank(g, rtol)))


def sample_matrix(rows: int, cols: int, seed: int, distribution: str = "gaussian") -> np.ndarray:
    """Seeded random matrix: gaussian, uniform on [-1, 1], or clipped Student-t(2) heavy tails"""
    rng = np.random.default_rng(seed)
    if distribution == "gaussian":
        return rng.standard_normal((rows, cols))
    if distribution == "uniform":
        return rng.uniform(-1.0, 1.0, size=(rows, cols))
    if distribution == "heavy-tail":
        return np.clip(rng.standard_t(2.0, size=(rows, cols)), -HEAVY_TAIL_CLIP, HEAVY_TAIL_CLIP)
    raise ValueError(f"unknown distribution '{distribution}', expected one of {DISTRIBUTIONS}")


def orthogonal_matrix(n: int, seed: int) -> np.ndarray:
    """Seeded Haar-distributed orthogonal n x n matrix"""
    q, r = np.linalg.qr(np.random.default_rng(seed).standard_normal((n, n)))
    return q * np.where(np.diag(r) < 0.0, -1.0, 1.0)


def parse_matrix(text: str) -> np.ndarray:
    """Parse "1,0;0,1" (rows separated by ';', entries by ',')"""
    try:
        rows = [[float(x) for x in row.split(",")] for row in text.strip().split(";") if row.strip()]
    except ValueError as e:
        raise ShapeMismatchError(f"could not parse matrix '{text}': {e}")
    if not rows or len({len(r) for r in rows}) != 1:
        raise ShapeMismatchError(f"matrix rows must be non-empty and equally long: '{text}'")
    return as_matrix(rows)
