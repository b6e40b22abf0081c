"""
Run configuration loading and artifact emission.

A run config file is plain key=value text. Values from the file override the
RunConfig defaults and command-line flags override the file.
"""

import csv
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
from dotenv import dotenv_values
from pydantic import ValidationError

from app.core.exceptions import ConfigError
from app.models.schemas import (
    DEFAULT_TRANSFORM,
    BenchRow,
    EmitKind,
    MlpModel,
    OptimizerKind,
    RunConfig,
    RunLog,
    SpectraTrace,
)
from app.services.diagnostics import layerwise_summary, running_summary, singular_trajectory, transform_bench

logger = logging.getLogger(__name__)

OPTIMIZER_KEYS = {"lr": "lr", "momentum": "momentum_beta", "nesterov": "nesterov", "weight_decay": "weight_decay"}
DATASET_KEYS = {"n", "d", "classes", "spread"}
TOP_KEYS = {"seed", "hidden", "steps", "batch_size", "output_dir", "emit"}
KNOWN_KEYS = set(OPTIMIZER_KEYS) | DATASET_KEYS | TOP_KEYS | {"optimizer", "ns_steps"}

DIAGNOSTICS_HEADER = ["step", "loss", "kappa_median_sofar", "sigma2_mean_sofar"]
LAYERS_HEADER = ["layer", "rho_median", "sigma2_mean"]
BENCH_HEADER = ["size", "transform", "mean_seconds", "std_seconds"]
SPECTRA_HEADER = ["step", "index", "sigma"]
GRAM_HEADER = ["step", "frobenius_distance_to_identity"]

TRAIN_SPECTRA_STEPS = 5
TRAIN_BENCH_SIZES = (64, 128, 256)
TRAIN_BENCH_REPEATS = 3


def _nest(flat: Dict[str, Any]) -> Dict[str, Any]:
    unknown = set(flat) - KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown run config keys: {sorted(unknown)}")

    config: Dict[str, Any] = {key: flat[key] for key in TOP_KEYS if key in flat}
    if isinstance(config.get("emit"), str):
        config["emit"] = [item.strip() for item in config["emit"].split(",") if item.strip()]

    dataset = {key: flat[key] for key in DATASET_KEYS if key in flat}
    if dataset:
        config["dataset"] = dataset

    optimizer = {field: flat[key] for key, field in OPTIMIZER_KEYS.items() if key in flat}
    try:
        kind = OptimizerKind(flat.get("optimizer", OptimizerKind.AUON.value))
    except ValueError:
        choices = ", ".join(k.value for k in OptimizerKind)
        raise ConfigError(f"unknown optimizer '{flat['optimizer']}', expected one of: {choices}")
    optimizer["kind"] = kind
    if "ns_steps" in flat:
        optimizer["transform"] = {"kind": DEFAULT_TRANSFORM[kind], "steps": flat["ns_steps"]}
    config["optimizer"] = optimizer
    return config


def load_run_config(path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Merge defaults, an optional key=value file and flag overrides (None means unset)"""
    flat: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"run config file not found: {path}")
        flat.update({k: v for k, v in dotenv_values(path).items() if v is not None and v != ""})
        logger.debug(f"Loaded {len(flat)} run config keys from {path}")
    flat.update({k: v for k, v in (overrides or {}).items() if v is not None})

    try:
        return RunConfig(**_nest(flat))
    except ValidationError as e:
        raise ConfigError(f"invalid run config: {e}")


def ensure_output_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"output directory {out} is not writable: {e}")
    return out


def _write_csv(path: Path, header: List[str], rows: Iterable[Sequence[Any]]) -> Path:
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)
    logger.info(f"Wrote {path}")
    return path


def write_runlog(log: RunLog, out_dir) -> Path:
    path = ensure_output_dir(out_dir) / "runlog.json"
    path.write_text(log.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path


def write_diagnostics(log: RunLog, out_dir) -> List[Path]:
    """diagnostics.csv (running kappa / sigma^2 per step) and layers.csv"""
    out = ensure_output_dir(out_dir)
    steps = [(row.step, row.loss, row.kappa_median, row.sigma2_mean) for row in running_summary(log)]
    layers = [(row.layer, row.rho_median, row.sigma2_mean) for row in layerwise_summary(log)]
    return [
        _write_csv(out / "diagnostics.csv", DIAGNOSTICS_HEADER, steps),
        _write_csv(out / "layers.csv", LAYERS_HEADER, layers),
    ]


def write_bench(rows: Sequence[BenchRow], out_dir) -> Path:
    return _write_csv(
        ensure_output_dir(out_dir) / "bench.csv",
        BENCH_HEADER,
        [(row.size, row.transform, row.mean_seconds, row.std_seconds) for row in rows],
    )


def write_spectra(trace: SpectraTrace, out_dir) -> List[Path]:
    """spectra.csv with one row per singular value per step, gram.csv with one row per step"""
    out = ensure_output_dir(out_dir)
    spectra = [
        (step, index, sigma)
        for step, sigmas in enumerate(trace.sigmas)
        for index, sigma in enumerate(sigmas)
    ]
    return [
        _write_csv(out / "spectra.csv", SPECTRA_HEADER, spectra),
        _write_csv(out / "gram.csv", GRAM_HEADER, enumerate(trace.gram_distances)),
    ]


def write_matrix(matrix: np.ndarray, path) -> Path:
    """Headerless CSV, full float64 precision"""
    path = Path(path)
    ensure_output_dir(path.parent)
    np.savetxt(path, np.atleast_2d(matrix), delimiter=",", fmt="%.17g")
    logger.info(f"Wrote {path}")
    return path


def emit_run(log: RunLog, model: MlpModel) -> List[Path]:
    """Write every artifact the run config asks for into its output directory"""
    run = log.config
    written: List[Path] = []
    if EmitKind.RUNLOG in run.emit:
        written.append(write_runlog(log, run.output_dir))
    if EmitKind.DIAGNOSTICS in run.emit:
        written.extend(write_diagnostics(log, run.output_dir))
    if EmitKind.SPECTRA in run.emit:
        trace = singular_trajectory(model.w1, TRAIN_SPECTRA_STEPS)
        written.extend(write_spectra(trace, run.output_dir))
    if EmitKind.BENCH in run.emit:
        rows = transform_bench(TRAIN_BENCH_SIZES, TRAIN_BENCH_REPEATS, seed=run.seed)
        written.append(write_bench(rows, run.output_dir))
    return written
