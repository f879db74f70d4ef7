"""Command-line orchestration: config parsing, experiment dispatch,
sweep automation, and metrics/report emission.

Subcommands: ``gen-data``, ``train``, ``sweep``, ``report``.  Every
command takes ``--config`` pointing at a YAML experiment config; unknown
keys are rejected so typos cannot silently change a sweep.

Exit codes: 0 success, 2 config/validation error, 3 file/I-O error,
4 failed sub-run.  ``CQKD_THREADS`` caps sweep parallelism (default 1).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import shutil
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .calibration_metrics import make_report, read_records, write_bin_report, write_records
from .data_pipeline import generate_synthetic, load_dataset, make_pairs, save_dataset
from .distillation_engine import (
    TrainConfig,
    predict_records,
    train_cqkd,
    train_dml,
    train_supervised,
    train_teacher,
)
from .exceptions import ConfigError, FormatError, RecordParseError, SweepRunError
from .nn_core import load_model, save_model

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_RUN = 4

METHODS = ("supervised", "cqkd", "dml", "teacher")
SWEEP_AXES = ("factor", "tau", "seed")

TRAIN_DATA_NAME = "train.cqds"
VAL_DATA_NAME = "val.cqds"


# ---------------------------------------------------------------------------
# Experiment config.

@dataclass(frozen=True)
class DatasetSection:
    num_samples: int
    num_classes: int
    full_size: int
    factor: int
    noise_sigma: float
    val_fraction: float


@dataclass(frozen=True)
class TrainSection:
    alpha: float
    tau: float
    taus: tuple
    epochs: int
    batch_size: int
    eta_max: float
    weight_decay: float
    cohort_size: int
    student_hidden: tuple
    teacher_hidden: tuple
    floor_fraction: float


@dataclass(frozen=True)
class MetricsSection:
    bins: int


@dataclass(frozen=True)
class ExperimentConfig:
    method: str
    output_dir: str
    seeds: tuple
    dataset: DatasetSection
    train: TrainSection
    metrics: MetricsSection

    @property
    def n_val(self) -> int:
        return int(round(self.dataset.num_samples * self.dataset.val_fraction))

    @property
    def n_train(self) -> int:
        return self.dataset.num_samples - self.n_val

    def student_arch(self, factor: int) -> tuple:
        side = self.dataset.full_size // factor
        return (side * side, *self.train.student_hidden, self.dataset.num_classes)

    def teacher_arch(self) -> tuple:
        size = self.dataset.full_size
        return (size * size, *self.train.teacher_hidden, self.dataset.num_classes)


_REQUIRED = object()


def _conv_str(value, path):
    if not isinstance(value, str) or not value:
        raise ConfigError(f"'{path}' must be a non-empty string, got {value!r}")
    return value


def _conv_choice(options):
    def convert(value, path):
        if value not in options:
            raise ConfigError(f"'{path}' must be one of {list(options)}, got {value!r}")
        return value
    return convert


def _conv_int(lo=None, hi=None):
    def convert(value, path):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"'{path}' must be an integer, got {value!r}")
        if lo is not None and value < lo:
            raise ConfigError(f"'{path}' must be >= {lo}, got {value}")
        if hi is not None and value > hi:
            raise ConfigError(f"'{path}' must be <= {hi}, got {value}")
        return value
    return convert


def _conv_float(lo=None, hi=None, lo_open=False, hi_open=False):
    def convert(value, path):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{path}' must be a number, got {value!r}")
        v = float(value)
        if not np.isfinite(v):
            raise ConfigError(f"'{path}' must be finite, got {value!r}")
        if lo is not None and (v <= lo if lo_open else v < lo):
            raise ConfigError(f"'{path}' must be {'>' if lo_open else '>='} {lo}, got {value}")
        if hi is not None and (v >= hi if hi_open else v > hi):
            raise ConfigError(f"'{path}' must be {'<' if hi_open else '<='} {hi}, got {value}")
        return v
    return convert


def _conv_list(item_conv, min_len=0):
    def convert(value, path):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"'{path}' must be a list, got {value!r}")
        if len(value) < min_len:
            raise ConfigError(f"'{path}' needs at least {min_len} entries, got {len(value)}")
        return tuple(item_conv(v, f"{path}[{i}]") for i, v in enumerate(value))
    return convert


def _parse_section(raw, path, specs):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"'{path}' must be a mapping, got {type(raw).__name__}")
    for key in raw:
        if key not in specs:
            raise ConfigError(f"unknown key '{path}.{key}'")
    values = {}
    for key, (convert, default) in specs.items():
        if key in raw:
            values[key] = convert(raw[key], f"{path}.{key}")
        elif default is _REQUIRED:
            raise ConfigError(f"missing required key '{path}.{key}'")
        else:
            values[key] = default
    return values


_DATASET_SPECS = {
    "num_samples": (_conv_int(lo=2), 2500),
    "num_classes": (_conv_int(lo=2, hi=0xFFFF), 10),
    "full_size": (_conv_int(lo=8), 32),
    "factor": (_conv_int(lo=1), 4),
    "noise_sigma": (_conv_float(lo=0.0), 0.15),
    "val_fraction": (_conv_float(lo=0.0, hi=1.0, hi_open=True), 0.2),
}

_TRAIN_SPECS = {
    "alpha": (_conv_float(lo=0.0, hi=1.0, lo_open=True, hi_open=True), 0.5),
    "tau": (_conv_float(lo=0.0, lo_open=True), 10.0),
    "taus": (_conv_list(_conv_float(lo=0.0, lo_open=True), min_len=1), (10.0, 20.0)),
    "epochs": (_conv_int(lo=0), 20),
    "batch_size": (_conv_int(lo=1), 32),
    "eta_max": (_conv_float(lo=0.0, lo_open=True), 0.001),
    "weight_decay": (_conv_float(lo=0.0), 0.01),
    "cohort_size": (_conv_int(lo=2), 3),
    "student_hidden": (_conv_list(_conv_int(lo=1)), (128, 64)),
    "teacher_hidden": (_conv_list(_conv_int(lo=1)), (128, 64)),
    "floor_fraction": (_conv_float(lo=0.0, hi=1.0, hi_open=True), 0.1),
}

_METRICS_SPECS = {
    "bins": (_conv_int(lo=1), 10),
}

_TOP_SPECS = {
    "method": (_conv_choice(METHODS), _REQUIRED),
    "output_dir": (_conv_str, _REQUIRED),
    "seeds": (_conv_list(_conv_int(lo=0), min_len=1), (0,)),
}
_TOP_SECTIONS = ("dataset", "train", "metrics")


def parse_experiment_config(raw) -> ExperimentConfig:
    """Validate a parsed YAML document into an :class:`ExperimentConfig`."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping at the top level")
    for key in raw:
        if key not in _TOP_SPECS and key not in _TOP_SECTIONS:
            raise ConfigError(f"unknown key '{key}'")
    top = {}
    for key, (convert, default) in _TOP_SPECS.items():
        if key in raw:
            top[key] = convert(raw[key], key)
        elif default is _REQUIRED:
            raise ConfigError(f"missing required key '{key}'")
        else:
            top[key] = default

    dataset = DatasetSection(**_parse_section(raw.get("dataset"), "dataset", _DATASET_SPECS))
    train = TrainSection(**_parse_section(raw.get("train"), "train", _TRAIN_SPECS))
    metrics = MetricsSection(**_parse_section(raw.get("metrics"), "metrics", _METRICS_SPECS))

    if dataset.full_size % dataset.factor != 0:
        raise ConfigError(
            f"'dataset.factor' ({dataset.factor}) must divide "
            f"'dataset.full_size' ({dataset.full_size})"
        )
    cfg = ExperimentConfig(
        method=top["method"], output_dir=top["output_dir"], seeds=top["seeds"],
        dataset=dataset, train=train, metrics=metrics,
    )
    if cfg.n_val < 1:
        raise ConfigError(
            "'dataset.val_fraction' leaves no validation samples "
            f"(num_samples={dataset.num_samples}, val_fraction={dataset.val_fraction})"
        )
    if cfg.n_train < dataset.num_classes or cfg.n_val < dataset.num_classes:
        raise ConfigError(
            f"'dataset.num_samples' too small: each split needs at least "
            f"num_classes={dataset.num_classes} samples "
            f"(got train={cfg.n_train}, validation={cfg.n_val})"
        )
    return cfg


def load_experiment_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return parse_experiment_config(raw)


def _config_to_dict(cfg: ExperimentConfig) -> dict:
    def clean(obj):
        if isinstance(obj, tuple):
            return [clean(v) for v in obj]
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        return obj

    return clean(dataclasses.asdict(cfg))


def build_train_config(cfg: ExperimentConfig, seed: int, factor=None, tau=None) -> TrainConfig:
    factor = cfg.dataset.factor if factor is None else int(factor)
    return TrainConfig(
        alpha=cfg.train.alpha,
        tau=cfg.train.tau if tau is None else float(tau),
        epochs=cfg.train.epochs,
        batch_size=cfg.train.batch_size,
        eta_max=cfg.train.eta_max,
        weight_decay=cfg.train.weight_decay,
        seed=int(seed),
        factor=factor,
        student_arch=cfg.student_arch(factor),
        teacher_arch=cfg.teacher_arch(),
        cohort_size=cfg.train.cohort_size,
        ece_bins=cfg.metrics.bins,
        floor_fraction=cfg.train.floor_fraction,
    )


# ---------------------------------------------------------------------------
# Shared artifact helpers.

def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _g17(v) -> str:
    return format(float(v), ".17g")


def _write_metrics_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "split", "loss", "accuracy", "entropy", "ece", "elapsed_s"])
        for r in rows:
            writer.writerow([
                r.epoch, r.split, _g17(r.loss), _g17(r.accuracy),
                _g17(r.entropy), _g17(r.ece), _g17(r.elapsed_s),
            ])


def _write_snapshot(cfg: ExperimentConfig, run_dir: Path, seed: int) -> Path:
    snapshot = _config_to_dict(cfg)
    snapshot["resolved_seed"] = int(seed)
    path = run_dir / "config_snapshot.yaml"
    with open(path, "w") as fh:
        yaml.safe_dump(snapshot, fh, sort_keys=False)
    return path


def _write_manifest(run_dir: Path, cfg: ExperimentConfig, seed: int, artifacts: dict,
                    started: str, status: str = "success", error=None) -> Path:
    manifest = {
        "version": __version__,
        "status": status,
        "started": started,
        "finished": _now(),
        "seed": int(seed),
        "config": _config_to_dict(cfg),
        "artifacts": {k: [str(p) for p in v] if isinstance(v, list) else str(v)
                      for k, v in artifacts.items()},
    }
    if error is not None:
        manifest["error"] = error
    path = run_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return path


def _generate_split_datasets(cfg: ExperimentConfig, seed: int, factor: int):
    # Train and validation use disjoint deterministic streams (2s, 2s+1)
    # so seed sweeps never share noise draws across splits.
    ds = cfg.dataset
    train_full = generate_synthetic(cfg.n_train, ds.num_classes, ds.full_size,
                                    ds.noise_sigma, 2 * seed, split="train")
    val_full = generate_synthetic(cfg.n_val, ds.num_classes, ds.full_size,
                                  ds.noise_sigma, 2 * seed + 1, split="validation")
    return make_pairs(train_full, factor), make_pairs(val_full, factor)


# ---------------------------------------------------------------------------
# gen-data

def cmd_gen_data(cfg: ExperimentConfig, out_dir: Path, seed: int) -> int:
    started = _now()
    out_dir.mkdir(parents=True, exist_ok=True)
    train_ds, val_ds = _generate_split_datasets(cfg, seed, cfg.dataset.factor)
    train_path = out_dir / TRAIN_DATA_NAME
    val_path = out_dir / VAL_DATA_NAME
    save_dataset(train_ds, train_path)
    save_dataset(val_ds, val_path)
    snapshot = _write_snapshot(cfg, out_dir, seed)
    _write_manifest(out_dir, cfg, seed, {
        "train_dataset": train_path,
        "val_dataset": val_path,
        "config_snapshot": snapshot,
    }, started)
    print(f"wrote {train_path} ({len(train_ds)} samples) and "
          f"{val_path} ({len(val_ds)} samples), factor {cfg.dataset.factor}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train

def _train_dispatch(method: str, train_cfg: TrainConfig, train_ds, val_ds, teacher_path):
    """Run one training method; returns (models, metrics-lists, eval side)."""
    if method == "supervised":
        model, metrics = train_supervised(train_cfg, train_ds, val_ds)
        return [model], [metrics], "low"
    if method == "teacher":
        model, metrics = train_teacher(train_cfg, train_ds, val_ds)
        return [model], [metrics], "full"
    if method == "cqkd":
        if teacher_path is None:
            raise ConfigError("method 'cqkd' requires --teacher CHECKPOINT")
        teacher = load_model(teacher_path)
        model, metrics = train_cqkd(teacher, train_cfg, train_ds, val_ds)
        return [model], [metrics], "low"
    if method == "dml":
        models, metrics = train_dml(train_cfg, train_ds, val_ds)
        return models, metrics, "low"
    raise ConfigError(f"unknown method {method!r}")


def _run_and_emit(cfg: ExperimentConfig, method: str, run_dir: Path, seed: int,
                  train_ds, val_ds, teacher_path=None, factor=None, tau=None,
                  bins=None) -> dict:
    """Train one configuration and write all artifacts into ``run_dir``.

    Returns a summary dict with the final validation metrics (cohort mean
    for mutual learning) and the elapsed wall time.
    """
    started = _now()
    t0 = time.perf_counter()
    run_dir.mkdir(parents=True, exist_ok=True)
    bins = cfg.metrics.bins if bins is None else int(bins)

    train_cfg = build_train_config(cfg, seed, factor=factor, tau=tau)
    if bins != train_cfg.ece_bins:
        train_cfg = dataclasses.replace(train_cfg, ece_bins=bins)
    models, metrics_lists, side = _train_dispatch(
        method, train_cfg, train_ds, val_ds, teacher_path)

    multi = len(models) > 1
    checkpoints, metrics_files, prediction_files, bin_files = [], [], [], []
    finals = []
    for i, (model, rows) in enumerate(zip(models, metrics_lists)):
        suffix = f"_s{i}" if multi else ""
        ckpt = run_dir / f"model{suffix}.cqkd"
        save_model(model, ckpt)
        checkpoints.append(ckpt)

        mpath = run_dir / f"metrics{suffix}.csv"
        _write_metrics_csv(mpath, rows)
        metrics_files.append(mpath)

        records = predict_records(model, val_ds, side=side)
        ppath = run_dir / f"predictions{suffix}.csv"
        write_records(records, ppath)
        prediction_files.append(ppath)

        report = make_report(records, bins)
        bpath = run_dir / f"bins{suffix}.txt"
        write_bin_report(report, bpath)
        bin_files.append(bpath)
        finals.append(report)

    artifacts = {
        "checkpoints": checkpoints,
        "metrics": metrics_files,
        "predictions": prediction_files,
        "bin_reports": bin_files,
        "config_snapshot": _write_snapshot(cfg, run_dir, seed),
    }
    _write_manifest(run_dir, cfg, seed, artifacts, started)

    elapsed = time.perf_counter() - t0
    return {
        "method": method,
        "factor": train_cfg.factor,
        "tau": train_cfg.tau if method == "cqkd" else None,
        "seed": seed,
        "accuracy": float(np.mean([r.accuracy for r in finals])),
        "ece": float(np.mean([r.ece for r in finals])),
        "mean_entropy": float(np.mean([r.mean_entropy for r in finals])),
        "elapsed_seconds": elapsed,
    }


def cmd_train(cfg: ExperimentConfig, out_dir: Path, seed: int, teacher_path, bins) -> int:
    train_file = out_dir / TRAIN_DATA_NAME
    val_file = out_dir / VAL_DATA_NAME
    for path in (train_file, val_file):
        if not path.exists():
            raise FileNotFoundError(
                f"dataset file {path} not found; run 'cqkd gen-data' first")
    train_ds = load_dataset(train_file)
    val_ds = load_dataset(val_file)
    summary = _run_and_emit(cfg, cfg.method, out_dir, seed, train_ds, val_ds,
                            teacher_path=teacher_path, bins=bins)
    print(f"method={summary['method']} factor={summary['factor']} seed={seed} "
          f"accuracy={summary['accuracy']:.3f} ece={summary['ece']:.3f} "
          f"entropy={summary['mean_entropy']:.3f} "
          f"elapsed={summary['elapsed_seconds']:.1f}s")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep

def _tau_slug(tau) -> str:
    return format(float(tau), "g").replace(".", "p")


def _sweep_worker(job) -> tuple:
    """Run one sweep sub-run; returns ("ok", row) or ("failed", manifest, msg).

    Top-level so it can run in worker processes.  Failures still write a
    manifest into the run directory so the orchestrator can point at it.
    """
    cfg, kind, method, factor, tau, seed, run_dir, teacher_ckpt = job
    run_dir = Path(run_dir)
    started = _now()
    try:
        if kind == "teacher":
            train_ds, val_ds = _generate_split_datasets(cfg, seed, 1)
            row = _run_and_emit(cfg, "teacher", run_dir, seed, train_ds, val_ds, factor=1)
            shutil.copyfile(run_dir / "model.cqkd", teacher_ckpt)
            return ("ok", row)
        train_ds, val_ds = _generate_split_datasets(cfg, seed, factor)
        row = _run_and_emit(cfg, method, run_dir, seed, train_ds, val_ds,
                            teacher_path=teacher_ckpt if method == "cqkd" else None,
                            factor=factor, tau=tau)
        return ("ok", row)
    except Exception as exc:  # noqa: BLE001 - reported via the manifest
        run_dir.mkdir(parents=True, exist_ok=True)
        manifest = _write_manifest(run_dir, cfg, seed, {}, started,
                                   status="failed", error=str(exc))
        return ("failed", str(manifest), f"{type(exc).__name__}: {exc}")


def _run_jobs(jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [_sweep_worker(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_sweep_worker, jobs))


def _collect(results):
    rows = []
    for result in results:
        if result[0] == "failed":
            raise SweepRunError(result[1], result[2])
        rows.append(result[1])
    return rows


def _summary_cell(row, column):
    if column == "tau":
        return "" if row["tau"] is None else _g17(row["tau"])
    if column in ("method", "seed"):
        return row[column]
    return _g17(row[column])


def _write_summary_csv(path, rows, aggregate_over_seeds: bool) -> None:
    columns = ["method", "factor", "tau", "seed", "accuracy", "ece",
               "mean_entropy", "elapsed_seconds"]
    out_rows = [[_summary_cell(r, c) for c in columns] for r in rows]

    if aggregate_over_seeds:
        groups = {}
        for r in rows:
            groups.setdefault((r["method"], r["factor"], r["tau"]), []).append(r)
        numeric = ["accuracy", "ece", "mean_entropy", "elapsed_seconds"]
        for (method, factor, tau), members in groups.items():
            for stat in ("mean", "std"):
                agg = {"method": method, "factor": factor, "tau": tau, "seed": stat}
                for col in numeric:
                    vals = np.array([m[col] for m in members])
                    if stat == "mean":
                        agg[col] = float(np.mean(vals))
                    else:
                        agg[col] = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
                out_rows.append([_summary_cell(agg, c) for c in columns])

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        writer.writerows(out_rows)


def _parse_values(axis: str, text: str):
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ConfigError("--values must list at least one value")
    try:
        if axis == "tau":
            return [float(p) for p in parts]
        return [int(p) for p in parts]
    except ValueError:
        raise ConfigError(f"cannot parse --values {text!r} for axis {axis}") from None


def _sweep_workers() -> int:
    raw = os.environ.get("CQKD_THREADS", "1")
    try:
        workers = int(raw)
    except ValueError:
        raise ConfigError(f"CQKD_THREADS must be a positive integer, got {raw!r}") from None
    if workers < 1:
        raise ConfigError(f"CQKD_THREADS must be a positive integer, got {raw!r}")
    return workers


def cmd_sweep(cfg: ExperimentConfig, out_dir: Path, axis: str, values) -> int:
    workers = _sweep_workers()
    factors = values if axis == "factor" else [cfg.dataset.factor]
    taus = values if axis == "tau" else list(cfg.train.taus)
    seeds = values if axis == "seed" else list(cfg.seeds)

    for factor in factors:
        if factor < 1 or cfg.dataset.full_size % factor != 0:
            raise ConfigError(
                f"sweep factor {factor} must divide full_size {cfg.dataset.full_size}")
    for seed in seeds:
        if seed < 0:
            raise ConfigError(f"sweep seed {seed} must be non-negative")
    for tau in taus:
        if tau <= 0:
            raise ConfigError(f"sweep tau {tau} must be positive")

    out_dir.mkdir(parents=True, exist_ok=True)
    teacher_dir = out_dir / "teachers"
    teacher_dir.mkdir(exist_ok=True)
    runs_dir = out_dir / "runs"

    teacher_ckpts = {s: teacher_dir / f"teacher_seed{s}.cqkd" for s in seeds}
    teacher_jobs = [
        (cfg, "teacher", "teacher", 1, None, seed, runs_dir / f"teacher_seed{seed}",
         teacher_ckpts[seed])
        for seed in seeds
    ]
    _collect(_run_jobs(teacher_jobs, workers))

    grid = [("supervised", None)] + [("cqkd", t) for t in taus] + [("dml", None)]
    jobs = []
    for seed in seeds:
        for factor in factors:
            for method, tau in grid:
                name = f"{method}_f{factor}_seed{seed}"
                if tau is not None:
                    name = f"{method}_tau{_tau_slug(tau)}_f{factor}_seed{seed}"
                jobs.append((cfg, "grid", method, factor, tau, seed,
                             runs_dir / name, teacher_ckpts[seed]))
    rows = _collect(_run_jobs(jobs, workers))

    summary_path = out_dir / "summary.csv"
    _write_summary_csv(summary_path, rows, aggregate_over_seeds=(axis == "seed"))
    print(f"wrote {summary_path} with {len(rows)} runs "
          f"(axis={axis}, values={values}, workers={workers})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report

def cmd_report(cfg: ExperimentConfig, predictions_path: Path, bins, out_dir) -> int:
    bins = cfg.metrics.bins if bins is None else int(bins)
    records = read_records(predictions_path)
    report = make_report(records, bins)

    print(f"n {report.n}")
    print(f"accuracy {report.accuracy:.3f}")
    print(f"mean_entropy {report.mean_entropy:.3f}")
    print(f"ece {report.ece:.3f}")
    print("bin lower upper count avg_accuracy avg_confidence")
    for b in report.bins:
        print(f"{b.index} {b.lower:.3f} {b.upper:.3f} {b.count} "
              f"{b.avg_accuracy:.3f} {b.avg_confidence:.3f}")

    out_dir = predictions_path.parent if out_dir is None else Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bin_path = out_dir / f"{predictions_path.stem}_bins.txt"
    write_bin_report(report, bin_path)
    print(f"wrote {bin_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cqkd",
        description="Cross-quality distillation experiments on synthetic images.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate train/validation dataset files")
    gen.add_argument("--config", required=True, help="experiment config YAML")
    gen.add_argument("--out", help="output directory (default: config output_dir)")
    gen.add_argument("--seed", type=int, help="override the config's first seed")

    train = sub.add_parser("train", help="train one model per the config's method")
    train.add_argument("--config", required=True)
    train.add_argument("--teacher", help="teacher checkpoint (required for method cqkd)")
    train.add_argument("--out", help="run directory holding the datasets and artifacts")
    train.add_argument("--seed", type=int)
    train.add_argument("--bins", type=int, help="calibration bin count override")

    sweep = sub.add_parser("sweep", help="run the method grid over an axis")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sweep.add_argument("--values", required=True,
                       help="comma-separated axis values, e.g. 1,2,4")
    sweep.add_argument("--out", help="sweep output directory")

    report = sub.add_parser("report", help="print a calibration report for a prediction CSV")
    report.add_argument("--config", required=True)
    report.add_argument("predictions", help="prediction-record CSV")
    report.add_argument("--bins", type=int)
    report.add_argument("--out", help="directory for the bin report file")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_experiment_config(args.config)
        out_dir = Path(args.out) if getattr(args, "out", None) else Path(cfg.output_dir)
        if args.command == "gen-data":
            seed = args.seed if args.seed is not None else cfg.seeds[0]
            return cmd_gen_data(cfg, out_dir, seed)
        if args.command == "train":
            seed = args.seed if args.seed is not None else cfg.seeds[0]
            return cmd_train(cfg, out_dir, seed, args.teacher, args.bins)
        if args.command == "sweep":
            return cmd_sweep(cfg, out_dir, args.axis, _parse_values(args.axis, args.values))
        return cmd_report(cfg, Path(args.predictions), args.bins, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SweepRunError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN
    except (FormatError, RecordParseError) as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
