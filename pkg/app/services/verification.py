"""
Seeded property batteries for the update transforms.

Every check measures against the Jacobi SVD oracle and reports the smallest
slack to its bound over the battery. A negative slack is a violation, and the
first violating sample is kept as a reproducible counterexample string.
"""

import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from app.core.config import settings
from app.models.schemas import HYBRID_COEFFS, MUON_COEFFS, Coeffs, PropertyResult
from app.services.diagnostics import correlation_energy
from app.services.linalg import DISTRIBUTIONS, orthogonal_matrix, sample_matrix, svd_jacobi
from app.services.transforms import (
    EPS,
    auon_update,
    cosh_rms,
    hybrid_update,
    newton_schulz_iterate,
    normalize_frobenius,
    quintic_scale,
)

logger = logging.getLogger(__name__)

SMALL_SHAPES: Tuple[Tuple[int, int], ...] = ((8, 8), (32, 16), (16, 32), (64, 64))
LARGE_SHAPE = (256, 256)
LARGE_EVERY = 100

DEFAULT_SPIKES = (2.0, 5.0, 10.0)
SCALE_FACTORS = (0.5, 2.0, 100.0)
ORTHOGONAL_SIZES = (4, 8, 16)

ROUNDOFF = 1e-12
IDENTITY_RTOL = 1e-10
SCALE_ATOL = 1e-6
FIXED_SCALE_ATOL = 1e-12


class _Check:
    """Running minimum of the slack for one property"""

    def __init__(self, name: str, tolerance: float = 0.0):
        self.name = name
        self.tolerance = tolerance
        self.samples = 0
        self.worst = float("inf")
        self.counterexample: Optional[str] = None

    def observe(self, margin: float, where: Callable[[], str]) -> None:
        self.samples += 1
        self.worst = min(self.worst, margin)
        if margin < -self.tolerance and self.counterexample is None:
            self.counterexample = f"{where()} margin={margin:.6g}"

    def result(self) -> PropertyResult:
        passed = self.counterexample is None
        level = logging.INFO if passed else logging.ERROR
        logger.log(level, f"{self.name}: {'pass' if passed else 'FAIL'} over {self.samples} samples, worst margin {self.worst:.6g}")
        return PropertyResult(
            name=self.name,
            passed=passed,
            samples=self.samples,
            worst_margin=self.worst if self.samples else 0.0,
            counterexample=self.counterexample,
        )


def battery_case(index: int) -> Tuple[Tuple[int, int], str]:
    """Shape and entry distribution of the index-th trust-region sample"""
    if index % LARGE_EVERY == LARGE_EVERY - 1:
        return LARGE_SHAPE, DISTRIBUTIONS[(index // LARGE_EVERY) % len(DISTRIBUTIONS)]
    return SMALL_SHAPES[index % len(SMALL_SHAPES)], DISTRIBUTIONS[index % len(DISTRIBUTIONS)]


def _where(seed: int, index: int, shape: Tuple[int, int], distribution: str) -> Callable[[], str]:
    return lambda: f"seed={seed} index={index} shape={shape[0]}x{shape[1]} distribution={distribution}"


def check_trust_region(samples: int, seed: int = 0) -> List[PropertyResult]:
    """
    Spectral trust region, variance bound and direction preservation of the
    cosh-RMS map on one shared battery.
    """
    trust = _Check("trust_region")
    variance = _Check("variance_bound")
    direction = _Check("direction_preservation")

    for i in range(samples):
        shape, dist = battery_case(i)
        g = sample_matrix(shape[0], shape[1], [seed, i], dist)
        update = normalize_frobenius(g)
        r = cosh_rms(update)
        u = auon_update(g)
        where = _where(seed, i, shape, dist)

        top = float(svd_jacobi(u).sigma[0])
        ceiling = 1.0 / (r + EPS)
        rms_floor = np.sqrt(1.0 + np.vdot(update, update) / update.size)
        trust.observe(min(1.0 - top, ceiling - top + ROUNDOFF, r - rms_floor + ROUNDOFF), where)

        fro = float(np.linalg.norm(u))
        variance.observe(min(ceiling - fro + ROUNDOFF, 1.0 - fro * fro), where)

        c = float(np.vdot(u, update) / np.vdot(update, update))
        drift = float(np.abs(u - c * update).max())
        direction.observe(min(c, ROUNDOFF * np.abs(u).max() - drift), where)

    return [trust.result(), variance.result(), direction.result()]


def _spiked(rows: int, cols: int, a: float, rng: np.random.Generator) -> np.ndarray:
    """Small Gaussian background with one entry of magnitude a at a random position"""
    x = 0.1 * rng.standard_normal((rows, cols))
    x[rng.integers(rows), rng.integers(cols)] = a * rng.choice([-1.0, 1.0])
    return x


def check_tail_suppression(samples: int, spikes: Sequence[float] = DEFAULT_SPIKES, seed: int = 0) -> PropertyResult:
    """
    Bound on the spiked construction normalize(x) / (r(x) + eps), where r is
    taken on the raw matrix x holding an entry of magnitude a. That r is at
    least cosh(a)/sqrt(N), so the construction has spectral norm at most
    sqrt(N)/cosh(a). This is not a bound on auon_transform(x), whose r sees
    the spike only after Frobenius normalization.

    The margin 1 - top * cosh(a) / sqrt(N) is computed from the spectrum of
    normalize(x) and the ratio cosh(a) / r, so spikes up to the cosh limit do
    not underflow the SVD.
    """
    check = _Check("tail_suppression")
    for a in spikes:
        for i in range(samples):
            rows, cols = SMALL_SHAPES[i % 3]
            x = _spiked(rows, cols, a, np.random.default_rng([seed, i, int(a * 1000)]))
            direction_top = float(svd_jacobi(normalize_frobenius(x)).sigma[0])
            ratio = np.cosh(a) / (cosh_rms(x) + EPS)
            check.observe(
                1.0 - direction_top * ratio / np.sqrt(x.size),
                lambda: f"seed={seed} index={i} shape={rows}x{cols} spike={a}",
            )
    return check.result()


def check_correlation_energy(samples: int, seed: int = 0) -> PropertyResult:
    """Trace and isotropy residual of U^T U equal those of the normalized input over (r + eps)^2"""
    check = _Check("correlation_energy")
    for i in range(samples):
        shape = SMALL_SHAPES[i % len(SMALL_SHAPES)]
        dist = DISTRIBUTIONS[i % len(DISTRIBUTIONS)]
        update = normalize_frobenius(sample_matrix(shape[0], shape[1], [seed, i, 3], dist))
        r = cosh_rms(update)
        factor = (r + EPS) ** 2
        trace_u, residual_u = correlation_energy(update / (r + EPS))
        trace_g, residual_g = correlation_energy(update)
        errors = [
            abs(got - want / factor) / max(abs(want / factor), np.finfo(np.float64).tiny)
            for got, want in ((trace_u, trace_g), (residual_u, residual_g))
        ]
        check.observe(IDENTITY_RTOL - max(errors), _where(seed, i, shape, dist))
    return check.result()


def check_scale_invariance(samples: int, seed: int = 0, factors: Sequence[float] = SCALE_FACTORS) -> PropertyResult:
    check = _Check("scale_invariance")
    for i in range(samples):
        shape = SMALL_SHAPES[i % len(SMALL_SHAPES)]
        g = sample_matrix(shape[0], shape[1], [seed, i, 4])
        base = auon_update(g)
        gap = max(float(np.abs(base - auon_update(c * g)).max()) for c in factors)
        check.observe(SCALE_ATOL - gap, _where(seed, i, shape, "gaussian"))
    return check.result()


def check_fixed_scale(seed: int = 0, max_steps: int = 3) -> PropertyResult:
    """k quintic steps on an orthogonal Q give p^k(1) Q, which is (a + b + c) Q for k = 1"""
    check = _Check("newton_schulz_fixed_scale")
    for n in ORTHOGONAL_SIZES:
        q = orthogonal_matrix(n, seed + n)
        for coeffs in (MUON_COEFFS, HYBRID_COEFFS):
            for k in range(1, max_steps + 1):
                expected = quintic_scale(coeffs, k) * q
                gap = float(np.abs(newton_schulz_iterate(q, k, coeffs) - expected).max())
                check.observe(
                    FIXED_SCALE_ATOL - gap,
                    lambda: f"seed={seed} shape={n}x{n} coeffs={coeffs} steps={k}",
                )
    return check.result()


def check_hybrid_trust_region(
    samples: int, seed: int = 0, steps: int = 1, coeffs: Coeffs = HYBRID_COEFFS
) -> PropertyResult:
    check = _Check("hybrid_trust_region")
    for i in range(samples):
        shape = SMALL_SHAPES[i % 3]
        g = sample_matrix(shape[0], shape[1], [seed, i, 5])
        top = float(svd_jacobi(hybrid_update(g, steps, coeffs)).sigma[0])
        check.observe(1.0 - top, _where(seed, i, shape, "gaussian"))
    return check.result()


def run_battery(
    samples: Optional[int] = None,
    seed: int = 0,
    spikes: Sequence[float] = DEFAULT_SPIKES,
) -> List[PropertyResult]:
    """
    All property checks. `samples` sizes the trust-region battery; the other
    batteries take fixed fractions of it (half for the hybrid map, a fifth
    for the energy identity, a tenth for scale invariance and per spike).
    """
    samples = settings.VERIFY_SAMPLES if samples is None else samples
    if samples < 1:
        raise ValueError(f"samples must be positive, got {samples}")
    logger.info(f"Running property battery: {samples} samples, seed={seed}, spikes={list(spikes)}")

    results = check_trust_region(samples, seed)
    results.append(check_tail_suppression(max(1, samples // 10), spikes, seed))
    results.append(check_correlation_energy(max(1, samples // 5), seed))
    results.append(check_scale_invariance(max(1, samples // 10), seed))
    results.append(check_fixed_scale(seed))
    results.append(check_hybrid_trust_region(max(1, samples // 2), seed))
    return results
