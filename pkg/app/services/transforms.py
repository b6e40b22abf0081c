"""
Update transforms: cosh-RMS scaling, Newton-Schulz orthogonalization, their
hybrid, and the exact polar factor used as a baseline.

The cosh-RMS map normalizes G by its Frobenius norm, then divides by
r = sqrt(mean(cosh^2(update))). Since r >= 1 the result is a positive multiple
of G with spectral norm strictly below one.
"""

from typing import Tuple

import numpy as np

from app.core.exceptions import CoshOverflowError, ZeroMatrixError
from app.models.schemas import (
    Coeffs,
    HYBRID_COEFFS,
    MUON_COEFFS,
    TransformKind,
    TransformReport,
    TransformSpec,
)
from app.services.linalg import as_matrix, estimate_spectral_norm, frobenius_norm, polar_factor

EPS0 = 1e-7
EPS = 1e-8
COSH_LIMIT = 700.0


def normalize_frobenius(g: np.ndarray, eps0: float = EPS0) -> np.ndarray:
    g = as_matrix(g)
    return g / (np.linalg.norm(g) + eps0)


def cosh_rms(x: np.ndarray) -> float:
    """
    sqrt of the mean of cosh^2 over all entries. The largest cosh is factored
    out before squaring, so entries up to COSH_LIMIT stay finite.
    """
    x = as_matrix(x)
    peak = float(np.abs(x).max())
    if peak > COSH_LIMIT:
        raise CoshOverflowError(
            f"entry of magnitude {peak:.6g} overflows cosh; normalize the update first"
        )
    c = np.cosh(x)
    top = float(c.max())
    return top * float(np.sqrt(np.mean(np.square(c / top))))


def cosh_rms_scale(update: np.ndarray, eps: float = EPS) -> Tuple[np.ndarray, float]:
    """U = update / (r + eps), returned with r"""
    r = cosh_rms(update)
    return update / (r + eps), r


def _report(g: np.ndarray, u: np.ndarray, r: float = 0.0) -> TransformReport:
    return TransformReport(
        input_frobenius=frobenius_norm(g),
        rms_statistic=r,
        output_spectral_norm=estimate_spectral_norm(u),
        output_frobenius=frobenius_norm(u),
    )


def _require_nonzero(g: np.ndarray, what: str) -> np.ndarray:
    g = as_matrix(g)
    if not g.any():
        raise ZeroMatrixError(f"{what} is undefined for the zero matrix")
    return g


def auon_update(g: np.ndarray, eps0: float = EPS0, eps: float = EPS) -> np.ndarray:
    u, _ = cosh_rms_scale(normalize_frobenius(g, eps0), eps)
    return u


def auon_transform(
    g: np.ndarray, eps0: float = EPS0, eps: float = EPS
) -> Tuple[np.ndarray, TransformReport]:
    g = as_matrix(g)
    u, r = cosh_rms_scale(normalize_frobenius(g, eps0), eps)
    return u, _report(g, u, r)


def newton_schulz_iterate(x: np.ndarray, steps: int, coeffs: Coeffs = MUON_COEFFS) -> np.ndarray:
    """
    The quintic map X <- aX + (bA + cA^2)X, A = XX^T, applied `steps` times
    to an already scaled iterate. Tall inputs are iterated as their transpose.
    """
    x = as_matrix(x)
    a, b, c = coeffs
    tall = x.shape[0] > x.shape[1]
    if tall:
        x = x.T
    for _ in range(steps):
        gram = x @ x.T
        x = a * x + (b * gram + c * (gram @ gram)) @ x
    return x.T if tall else x


def quintic_scale(coeffs: Coeffs, steps: int) -> float:
    """p^k(1) for p(x) = ax + bx^3 + cx^5; where the quintic map sends an orthogonal Q after k steps"""
    a, b, c = coeffs
    s = 1.0
    for _ in range(steps):
        s = a * s + b * s ** 3 + c * s ** 5
    return s


def newton_schulz(g: np.ndarray, steps: int = 5, coeffs: Coeffs = MUON_COEFFS) -> np.ndarray:
    g = _require_nonzero(g, "Newton-Schulz orthogonalization")
    if steps < 1:
        raise ValueError("newton_schulz needs at least one step")
    return newton_schulz_iterate(normalize_frobenius(g), steps, coeffs)


def hybrid_update(g: np.ndarray, steps: int = 1, coeffs: Coeffs = HYBRID_COEFFS) -> np.ndarray:
    if steps == 0:
        return auon_update(g)
    return auon_update(newton_schulz(g, steps, coeffs))


def hybrid_transform(
    g: np.ndarray, steps: int = 1, coeffs: Coeffs = HYBRID_COEFFS
) -> Tuple[np.ndarray, TransformReport]:
    """Newton-Schulz partial decorrelation followed by cosh-RMS scaling; steps=0 is plain AuON"""
    if steps == 0:
        return auon_transform(g)
    g = _require_nonzero(g, "hybrid transform")
    u, r = cosh_rms_scale(normalize_frobenius(newton_schulz(g, steps, coeffs)))
    return u, _report(g, u, r)


def exact_orthogonalize(g: np.ndarray) -> np.ndarray:
    return polar_factor(g)


def shape_scale(rows: int, cols: int) -> float:
    """sqrt(max(1, rows / cols))"""
    if rows < 1 or cols < 1:
        raise ValueError(f"shape must be positive, got ({rows}, {cols})")
    return max(1.0, rows / cols) ** 0.5


def apply_transform(g: np.ndarray, spec: TransformSpec) -> Tuple[np.ndarray, TransformReport]:
    g = as_matrix(g)
    if spec.kind == TransformKind.COSH_RMS:
        return auon_transform(g)
    if spec.kind == TransformKind.HYBRID_COSH_RMS:
        return hybrid_transform(g, spec.steps, spec.coeffs)
    if spec.kind == TransformKind.NEWTON_SCHULZ:
        u = newton_schulz(g, spec.steps, spec.coeffs)
    elif spec.kind == TransformKind.EXACT_POLAR:
        u = exact_orthogonalize(g)
    else:
        u = g.copy()
    return u, _report(g, u)
