"""
Command-line entry point: transform demos, property batteries, timing
benchmarks, Newton-Schulz spectra and training runs.
"""

from contextlib import contextmanager
from pathlib import Path
from typing import List, Optional, Tuple

import typer
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from app.core.config import settings
from app.core.exceptions import AuonError
from app.core.logging import configure_logging
from app.models.schemas import MUON_COEFFS, Coeffs, EmitKind, OptimizerKind, TransformKind, TransformSpec
from app.services.diagnostics import SPEEDUP_TARGET, bench_speedups, singular_trajectory, transform_bench
from app.services.linalg import parse_matrix, sample_matrix
from app.services.nn import train_model
from app.services.runs import emit_run, load_run_config, write_bench, write_matrix, write_spectra
from app.services.transforms import apply_transform
from app.services.verification import DEFAULT_SPIKES, run_battery

cli = typer.Typer(
    name="auon",
    help="cosh-RMS update transforms, their property batteries and a desk-scale training harness",
    no_args_is_help=True,
    add_completion=False,
)
console = Console()

MAX_PRINTED_DIM = 8


@contextmanager
def _exit_on_error():
    """Library errors become a red message and exit code 1"""
    try:
        yield
    except (AuonError, ValueError) as e:
        console.print(f"[red]Error:[/red] {escape(str(e))}", soft_wrap=True)
        raise typer.Exit(code=1)


def _parse_shape(text: str) -> Tuple[int, int]:
    try:
        rows, cols = (int(part) for part in text.lower().split("x"))
    except ValueError:
        raise ValueError(f"shape must look like RxC, got '{text}'")
    if rows < 1 or cols < 1:
        raise ValueError(f"shape must be positive, got '{text}'")
    return rows, cols


def _parse_coeffs(text: Optional[str]) -> Optional[Coeffs]:
    if text is None:
        return None
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"coeffs must be three comma-separated numbers a,b,c, got '{text}'")
    return parts[0], parts[1], parts[2]


@cli.callback()
def main(
    log_level: Optional[str] = typer.Option(None, "--log-level", help="Override LOG_LEVEL for this invocation"),
):
    configure_logging(log_level)


@cli.command()
def transform(
    kind: TransformKind = typer.Option(TransformKind.COSH_RMS, "--kind", help="Update transform to apply"),
    matrix: Optional[str] = typer.Option(None, "--matrix", help='Rows separated by ";", entries by ","'),
    shape: Optional[str] = typer.Option(None, "--shape", help="RxC; a seeded Gaussian when --matrix is absent"),
    seed: int = typer.Option(0, "--seed"),
    steps: Optional[int] = typer.Option(None, "--steps", help="Newton-Schulz steps"),
    coeffs: Optional[str] = typer.Option(None, "--coeffs", help="Quintic coefficients a,b,c"),
    out: Optional[Path] = typer.Option(None, "--out", help="Write the output matrix as headerless CSV"),
):
    """Apply one update transform and report its norms."""
    with _exit_on_error():
        if matrix is not None:
            g = parse_matrix(matrix)
            if shape is not None and g.shape != _parse_shape(shape):
                raise ValueError(f"--shape {shape} does not match the {g.shape[0]}x{g.shape[1]} --matrix")
        elif shape is not None:
            g = sample_matrix(*_parse_shape(shape), seed)
        else:
            raise ValueError("pass --matrix or --shape")

        spec = TransformSpec(kind=kind, steps=steps, coeffs=_parse_coeffs(coeffs))
        u, report = apply_transform(g, spec)

        table = Table(title=f"{kind.value} on {g.shape[0]}x{g.shape[1]}")
        table.add_column("quantity")
        table.add_column("value", justify="right")
        for name, value in report.model_dump().items():
            table.add_row(name, f"{value:.6f}")
        console.print(table)

        if out is not None:
            write_matrix(u, out)
            console.print(f"Output written to {out}", soft_wrap=True)
        elif max(u.shape) <= MAX_PRINTED_DIM:
            for row in u:
                console.print(",".join(f"{x:.6f}" for x in row), soft_wrap=True)


@cli.command()
def verify(
    samples: Optional[int] = typer.Option(None, "--samples", help="Trust-region battery size (VERIFY_SAMPLES by default)"),
    seed: int = typer.Option(0, "--seed", min=0),
    spike: Optional[List[float]] = typer.Option(None, "--spike", help="Spike magnitude for tail suppression; repeatable"),
):
    """Run the seeded property batteries; exit 1 on any violation."""
    with _exit_on_error():
        results = run_battery(samples, seed, spike or DEFAULT_SPIKES)

    table = Table(title=f"Property battery (seed {seed})")
    table.add_column("property")
    table.add_column("result")
    table.add_column("samples", justify="right")
    table.add_column("worst margin", justify="right")
    for result in results:
        verdict = "[green]pass[/green]" if result.passed else "[red]FAIL[/red]"
        table.add_row(result.name, verdict, str(result.samples), f"{result.worst_margin:.3e}")
    console.print(table)

    failures = [r for r in results if not r.passed]
    for result in failures:
        console.print(f"[red]{result.name}[/red] counterexample: {escape(result.counterexample or '')}", soft_wrap=True)
    if failures:
        raise typer.Exit(code=1)


@cli.command()
def bench(
    size: List[int] = typer.Option([64, 128, 256], "--size", help="Square matrix size; repeatable"),
    repeats: int = typer.Option(5, "--repeats"),
    seed: int = typer.Option(0, "--seed", min=0),
    out_dir: Optional[Path] = typer.Option(None, "--out-dir", help="Defaults to AUON_OUTPUT_DIR"),
):
    """Time each transform on seeded n x n Gaussians and write bench.csv."""
    with _exit_on_error():
        rows = transform_bench(size, repeats, seed=seed)
        path = write_bench(rows, out_dir or settings.AUON_OUTPUT_DIR)

    table = Table(title="Transform wall time (one thread)")
    for column in ("size", "transform", "mean s", "std s"):
        table.add_column(column, justify="right" if column != "transform" else "left")
    for row in rows:
        table.add_row(str(row.size), row.transform, f"{row.mean_seconds:.6f}", f"{row.std_seconds:.6f}")
    console.print(table)
    for n, ratio in bench_speedups(rows).items():
        color = "green" if ratio >= SPEEDUP_TARGET else "yellow"
        console.print(f"n={n}: auon is [{color}]{ratio:.2f}x[/{color}] faster than newton_schulz5 (target {SPEEDUP_TARGET:.0f}x)")
    console.print(f"Wrote {path}", soft_wrap=True)


@cli.command()
def spectra(
    shape: str = typer.Option("64x64", "--shape", help="RxC of the seeded Gaussian input"),
    seed: int = typer.Option(0, "--seed", min=0),
    steps: int = typer.Option(5, "--steps", min=0),
    coeffs: Optional[str] = typer.Option(None, "--coeffs", help="Quintic coefficients a,b,c"),
    out_dir: Optional[Path] = typer.Option(None, "--out-dir", help="Defaults to AUON_OUTPUT_DIR"),
):
    """Trace singular values and Gram distance through Newton-Schulz steps."""
    with _exit_on_error():
        g = sample_matrix(*_parse_shape(shape), seed)
        trace = singular_trajectory(g, steps, _parse_coeffs(coeffs) or MUON_COEFFS)
        paths = write_spectra(trace, out_dir or settings.AUON_OUTPUT_DIR)

    table = Table(title=f"Newton-Schulz on {shape}")
    for column in ("step", "sigma max", "sigma min", "||XX^T - I||_F"):
        table.add_column(column, justify="right")
    for step, (sigmas, distance) in enumerate(zip(trace.sigmas, trace.gram_distances)):
        table.add_row(str(step), f"{max(sigmas):.4f}", f"{min(sigmas):.4f}", f"{distance:.4f}")
    console.print(table)
    console.print(f"Wrote {', '.join(str(p) for p in paths)}", soft_wrap=True)


@cli.command()
def train(
    config: Optional[Path] = typer.Option(None, "--config", help="key=value run config file"),
    optimizer: Optional[OptimizerKind] = typer.Option(None, "--optimizer"),
    lr: Optional[float] = typer.Option(None, "--lr"),
    momentum: Optional[float] = typer.Option(None, "--momentum"),
    nesterov: Optional[bool] = typer.Option(None, "--nesterov/--no-nesterov"),
    weight_decay: Optional[float] = typer.Option(None, "--weight-decay"),
    ns_steps: Optional[int] = typer.Option(None, "--ns-steps"),
    n: Optional[int] = typer.Option(None, "--n", help="Dataset size"),
    d: Optional[int] = typer.Option(None, "--d", help="Input dimension"),
    classes: Optional[int] = typer.Option(None, "--classes"),
    spread: Optional[float] = typer.Option(None, "--spread"),
    hidden: Optional[int] = typer.Option(None, "--hidden"),
    steps: Optional[int] = typer.Option(None, "--steps"),
    batch_size: Optional[int] = typer.Option(None, "--batch-size"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    output_dir: Optional[Path] = typer.Option(None, "--output-dir"),
    emit: Optional[List[EmitKind]] = typer.Option(None, "--emit", help="Artifacts to write; repeatable"),
):
    """Train the MLP on Gaussian blobs and log alignment diagnostics."""
    overrides = {
        "optimizer": optimizer.value if optimizer else None,
        "lr": lr,
        "momentum": momentum,
        "nesterov": nesterov,
        "weight_decay": weight_decay,
        "ns_steps": ns_steps,
        "n": n,
        "d": d,
        "classes": classes,
        "spread": spread,
        "hidden": hidden,
        "steps": steps,
        "batch_size": batch_size,
        "seed": seed,
        "output_dir": str(output_dir) if output_dir else None,
        "emit": [kind.value for kind in emit] if emit else None,
    }
    with _exit_on_error():
        run = load_run_config(config, overrides)
        log, model, _ = train_model(run)
        paths = emit_run(log, model)

    summary = log.summary
    table = Table(title=f"{run.optimizer.kind.value}, {run.steps} steps, seed {run.seed}")
    table.add_column("quantity")
    table.add_column("value", justify="right")
    table.add_column("95% CI", justify="right")
    table.add_row("loss", f"{summary.initial_loss:.4f} -> {summary.final_loss:.4f}", "")
    table.add_row("accuracy", f"{summary.final_accuracy:.3f}", "")
    table.add_row("kappa median", f"{summary.kappa_median:.4f}", escape(f"[{summary.kappa_ci.lo:.4f}, {summary.kappa_ci.hi:.4f}]"))
    table.add_row("kappa p10", f"{summary.kappa_p10:.4f}", "")
    table.add_row("sigma^2 mean", f"{summary.sigma2_mean:.4f}", escape(f"[{summary.sigma2_ci.lo:.4f}, {summary.sigma2_ci.hi:.4f}]"))
    console.print(table)

    layers = Table(title="Per layer")
    for column in ("layer", "median rho", "mean ||U||^2"):
        layers.add_column(column)
    for row in summary.layers:
        layers.add_row(row.layer, f"{row.rho_median:.4f}", f"{row.sigma2_mean:.4f}")
    console.print(layers)
    for path in paths:
        console.print(f"Wrote {path}", soft_wrap=True)


if __name__ == "__main__":
    cli()
