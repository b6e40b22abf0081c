"""
Alignment and update-energy diagnostics for training runs, bootstrap
intervals, correlation energy of an update, and the data behind the
Newton-Schulz spectra and transform timing comparisons.
"""

import logging
import time
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from threadpoolctl import threadpool_limits

from app.core.config import settings
from app.core.exceptions import (
    DimensionTooLargeError,
    EmptyLogError,
    InsufficientSamplesError,
    ShapeMismatchError,
    ZeroMatrixError,
)
from app.models.schemas import (
    BenchRow,
    BootstrapCI,
    Coeffs,
    HYBRID_COEFFS,
    KappaSigma,
    LayerSummary,
    MUON_COEFFS,
    ParamState,
    RunLog,
    RunSummary,
    SpectraTrace,
    Statistic,
    StepDiagnostics,
    StepwiseRow,
)
from app.services.linalg import SVD_MAX_DIM, as_matrix, estimate_spectral_norm, sample_matrix, svd_jacobi
from app.services.optim import as_2d
from app.services.transforms import (
    auon_update,
    exact_orthogonalize,
    hybrid_update,
    newton_schulz,
    newton_schulz_iterate,
    normalize_frobenius,
)

logger = logging.getLogger(__name__)

RHO_EPS = 1e-12
MIN_BENCH_SIZE = 16
SPEEDUP_TARGET = 5.0


def alignment_sample(g: np.ndarray, u: np.ndarray, eps: float = RHO_EPS) -> float:
    """rho = <g, u> / (||g||^2 + eps) over flattened entries"""
    g = np.asarray(g, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if g.shape != u.shape:
        raise ShapeMismatchError(f"gradient {g.shape} and update {u.shape} differ in shape")
    return float(np.vdot(g, u) / (np.vdot(g, g) + eps))


def percentile(samples: Sequence[float], q: float) -> float:
    """q-th percentile, linear interpolation between order statistics"""
    return float(np.percentile(np.asarray(samples, dtype=np.float64), q, method="linear"))


def record_step(
    step: int, loss: float, grads: Dict[str, np.ndarray], states: Dict[str, ParamState]
) -> StepDiagnostics:
    """One diagnostics row: per-layer rho, ||U||^2, ||U||_2, r and the flattened rho"""
    names = sorted(grads)
    rho, sigma2, spectral, rms = {}, {}, {}, {}
    for name in names:
        state = states[name]
        u = state.last_update
        rho[name] = alignment_sample(grads[name], u)
        sigma2[name] = float(np.vdot(u, u))
        if state.last_report is not None:
            spectral[name] = state.last_report.output_spectral_norm
            rms[name] = state.last_report.rms_statistic
        else:
            spectral[name] = estimate_spectral_norm(as_2d(u))
            rms[name] = 0.0

    flat_g = np.concatenate([np.ravel(grads[name]) for name in names])
    flat_u = np.concatenate([np.ravel(states[name].last_update) for name in names])
    return StepDiagnostics(
        step=step,
        loss=loss,
        rho_samples=rho,
        sigma2_samples=sigma2,
        update_spectral_norm=spectral,
        rms_statistic=rms,
        rho_flat=alignment_sample(flat_g, flat_u),
    )


def _kappa_samples(steps: Sequence[StepDiagnostics]) -> List[float]:
    return [record.rho_flat for record in steps]


def _sigma2_samples(steps: Sequence[StepDiagnostics]) -> List[float]:
    return [value for record in steps for value in record.sigma2_samples.values()]


def aggregate_kappa_sigma(log: RunLog) -> KappaSigma:
    """
    kappa as the median (and 10th percentile) of the flattened per-step
    alignment samples; sigma^2 as the mean of every per-layer ||U||^2 sample.
    """
    if not log.steps:
        raise EmptyLogError("run log has no steps to aggregate")
    kappas = _kappa_samples(log.steps)
    sigma2 = _sigma2_samples(log.steps)
    return KappaSigma(
        kappa_median=percentile(kappas, 50.0),
        kappa_p10=percentile(kappas, 10.0),
        sigma2_mean=float(np.mean(sigma2)) if sigma2 else 0.0,
    )


def bootstrap_ci(
    samples: Sequence[float],
    statistic: Statistic = Statistic.MEDIAN,
    seed: int = 0,
    iterations: Optional[int] = None,
    level: Optional[float] = None,
) -> BootstrapCI:
    """Percentile bootstrap; the interval is widened to contain the plug-in value"""
    iterations = iterations or settings.BOOTSTRAP_ITERATIONS
    level = level or settings.BOOTSTRAP_LEVEL
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 2:
        raise InsufficientSamplesError(f"bootstrap needs at least 2 samples, got {x.size}")

    reducer: Callable = np.median if statistic == Statistic.MEDIAN else np.mean
    point = float(reducer(x))

    rng = np.random.default_rng(seed)
    chunk = max(1, 1_000_000 // x.size)
    replicates = []
    for start in range(0, iterations, chunk):
        rows = min(chunk, iterations - start)
        idx = rng.integers(0, x.size, size=(rows, x.size))
        replicates.append(reducer(x[idx], axis=1))
    replicates = np.concatenate(replicates)

    tail = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(replicates, [tail, 100.0 - tail])
    return BootstrapCI(
        point=point,
        lo=min(float(lo), point),
        hi=max(float(hi), point),
        level=level,
        iterations=iterations,
        statistic=statistic,
    )


def layerwise_summary(log: RunLog) -> List[LayerSummary]:
    if not log.steps:
        raise EmptyLogError("run log has no steps to summarize")
    layers = sorted(log.steps[0].rho_samples)
    return [
        LayerSummary(
            layer=layer,
            rho_median=percentile([s.rho_samples[layer] for s in log.steps], 50.0),
            sigma2_mean=float(np.mean([s.sigma2_samples[layer] for s in log.steps])),
        )
        for layer in layers
    ]


def running_summary(log: RunLog) -> List[StepwiseRow]:
    """Cumulative kappa and sigma^2 after every step"""
    rows = []
    kappas: List[float] = []
    sigma2: List[float] = []
    for record in log.steps:
        kappas.append(record.rho_flat)
        sigma2.extend(record.sigma2_samples.values())
        rows.append(StepwiseRow(
            step=record.step,
            loss=record.loss,
            kappa_median=percentile(kappas, 50.0),
            kappa_p10=percentile(kappas, 10.0),
            sigma2_mean=float(np.mean(sigma2)) if sigma2 else 0.0,
        ))
    return rows


def stepwise_table(log: RunLog, every: int = 10) -> List[StepwiseRow]:
    """Running summary sampled at steps every, 2*every, ... (1-based)"""
    if every < 1:
        raise ValueError("every must be positive")
    return [row for row in running_summary(log) if (row.step + 1) % every == 0]


def correlation_energy(u: np.ndarray) -> Tuple[float, float]:
    """trace(U^T U) and the isotropy residual ||U^T U - (trace/n) I||_F"""
    u = as_matrix(u)
    gram = u.T @ u
    trace = float(np.trace(gram))
    residual = gram - (trace / gram.shape[0]) * np.eye(gram.shape[0])
    return trace, float(np.linalg.norm(residual))


def gram_distance(x: np.ndarray) -> float:
    """||X X^T - I||_F on the smaller side of X"""
    x = as_matrix(x)
    gram = x @ x.T if x.shape[0] <= x.shape[1] else x.T @ x
    return float(np.linalg.norm(gram - np.eye(gram.shape[0])))


def singular_trajectory(
    g: np.ndarray,
    steps: int,
    coeffs: Coeffs = MUON_COEFFS,
    normalize: bool = True,
) -> SpectraTrace:
    """
    Singular spectrum and Gram distance to identity after each Newton-Schulz
    step; step 0 is the (normalized) input.
    """
    g = as_matrix(g)
    if not g.any():
        raise ZeroMatrixError("singular trajectory is undefined for the zero matrix")
    if min(g.shape) > SVD_MAX_DIM:
        raise DimensionTooLargeError(f"spectra need min(rows, cols) <= {SVD_MAX_DIM}, got {g.shape}")

    x = normalize_frobenius(g) if normalize else g
    sigmas = [svd_jacobi(x).sigma.tolist()]
    distances = [gram_distance(x)]
    for _ in range(steps):
        x = newton_schulz_iterate(x, 1, coeffs)
        sigmas.append(svd_jacobi(x).sigma.tolist())
        distances.append(gram_distance(x))
    return SpectraTrace(sigmas=sigmas, gram_distances=distances)


def _time(fn: Callable[[], object], repeats: int) -> Tuple[float, float]:
    fn()  # warm-up
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return float(np.mean(times)), float(np.std(times))


def transform_bench(
    sizes: Sequence[int],
    repeats: int,
    seed: int = 0,
    polar_max_size: Optional[int] = None,
) -> List[BenchRow]:
    """Mean and std wall time per transform on seeded n x n Gaussians, one BLAS thread"""
    polar_max_size = settings.BENCH_POLAR_MAX_SIZE if polar_max_size is None else polar_max_size
    if repeats < 1:
        raise ValueError(f"repeats must be at least 1, got {repeats}")
    if not sizes or any(n < MIN_BENCH_SIZE for n in sizes):
        raise ValueError(f"benchmark sizes must be >= {MIN_BENCH_SIZE}, got {list(sizes)}")

    rows: List[BenchRow] = []
    with threadpool_limits(limits=1):
        for n in sizes:
            g = sample_matrix(n, n, seed + n)
            cases = [
                ("auon", lambda: auon_update(g)),
                ("hybrid_auon1", lambda: hybrid_update(g, 1, HYBRID_COEFFS)),
                ("newton_schulz5", lambda: newton_schulz(g, 5, MUON_COEFFS)),
            ]
            if n <= min(polar_max_size, SVD_MAX_DIM):
                cases.append(("exact_polar", lambda: exact_orthogonalize(g)))
            else:
                logger.warning(f"Skipping exact_polar at n={n} (limit {polar_max_size})")

            for name, fn in cases:
                mean, std = _time(fn, repeats)
                logger.info(f"bench n={n} {name}: {mean:.6f}s +/- {std:.6f}s")
                rows.append(BenchRow(size=n, transform=name, mean_seconds=mean, std_seconds=std))
    return rows


def bench_speedups(rows: Sequence[BenchRow], baseline: str = "newton_schulz5") -> Dict[int, float]:
    """baseline / auon mean time per size; sizes missing either transform are left out"""
    times = {(row.size, row.transform): row.mean_seconds for row in rows}
    speedups = {
        n: times[(n, baseline)] / times[(n, "auon")]
        for n in sorted({row.size for row in rows})
        if (n, baseline) in times and (n, "auon") in times and times[(n, "auon")] > 0.0
    }
    for n, ratio in speedups.items():
        if ratio < SPEEDUP_TARGET:
            logger.warning(f"auon speedup over {baseline} at n={n} is {ratio:.2f}x, below the {SPEEDUP_TARGET:.0f}x target")
        else:
            logger.info(f"auon speedup over {baseline} at n={n}: {ratio:.2f}x")
    return speedups


def summarize_run(log: RunLog, final_loss: float, final_accuracy: float, seed: int = 0) -> RunSummary:
    aggregate = aggregate_kappa_sigma(log)
    kappas = _kappa_samples(log.steps)
    sigma2 = _sigma2_samples(log.steps)
    # A one-step run still gets intervals: duplicate the lone sample
    if len(kappas) < 2:
        kappas = kappas * 2
    if len(sigma2) < 2:
        sigma2 = sigma2 * 2
    return RunSummary(
        initial_loss=log.steps[0].loss,
        final_loss=final_loss,
        final_accuracy=final_accuracy,
        kappa_median=aggregate.kappa_median,
        kappa_p10=aggregate.kappa_p10,
        sigma2_mean=aggregate.sigma2_mean,
        kappa_ci=bootstrap_ci(kappas, Statistic.MEDIAN, seed=seed),
        sigma2_ci=bootstrap_ci(sigma2, Statistic.MEAN, seed=seed + 1),
        layers=layerwise_summary(log),
    )
