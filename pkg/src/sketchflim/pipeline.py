"""Experiment orchestration behind the CLI subcommands.

Each stage reads and writes well-known file names inside one run directory,
so gen -> knots -> sketch -> fit -> eval composes without extra wiring.  All
randomness flows from the config seed through per-pixel child seeds; knot
placement is deliberately seed-independent so different experiment seeds
share the same basis.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .decay import (
    BiParams,
    Histogram,
    MonoParams,
    TimeAxis,
    build_irf,
    derive_seed,
    generate_spatial_map,
    generate_trial_set,
    histogram_to_timestamps,
)
from .errors import ConfigError, DataError
from .fisher import (
    KnotSet,
    allocate_knots,
    fisher_cdf,
    fisher_density_bi,
    fisher_density_mono,
    uniform_knots,
)
from .fit import FitResult, make_context, mean_lifetime
from .fit import fit_histogram_mle, fit_histogram_nlsf, fit_sketch
from .metrics import MetricReport, RunKey, assemble_report
from .sketch import (
    STANDARD_LUT_DEPTHS,
    SplineBasis,
    build_fxp_lut,
    fxp_sketch_from_timestamps,
    irf_correct_phasor,
    phasor_from_histogram,
    sketch_matrix,
)

HIST_FILE = "hist.csv"
TRUTH_FILE = "truth.csv"
KNOT_FILE = "knots.txt"
SKETCH_FILE = "sketch.csv"
LUT_FILE = "lut.bin"
REPORT_FILE = "report.csv"
PHASOR_FILE = "phasor.csv"
LUT_BENCH_FILE = "lut_bench.csv"
MANIFEST_FILE = "run_config.ini"


def results_file(method: str) -> str:
    return f"results_{method}.csv"


def default_threads() -> int:
    return os.cpu_count() or 1


def _reference_amplitude(cfg) -> float:
    return cfg.peak_counts if cfg.peak_counts is not None else float(cfg.total_photons)


def make_knots(cfg) -> KnotSet:
    """Knot boundaries for the configured basis (seed-independent)."""
    axis = cfg.axis()
    if cfg.knot_mode == "uniform":
        return uniform_knots(axis, cfg.m)
    a = _reference_amplitude(cfg)
    if cfg.kind == "mono":
        density = fisher_density_mono(
            cfg.param_ranges(), a, cfg.irf_spec(), axis,
            n_grid=cfg.n_grid, epsilon=cfg.epsilon, aggregation=cfg.aggregation,
        )
    else:
        density = fisher_density_bi(
            cfg.param_ranges(), a, cfg.irf_spec(), axis,
            n_grid=cfg.n_grid, epsilon=cfg.epsilon, aggregation=cfg.aggregation,
        )
    return allocate_knots(fisher_cdf(density, axis), axis, cfg.m)


def _truth_row(params) -> dict:
    if isinstance(params, MonoParams):
        return {"tau1": params.tau, "mean_tau": params.tau}
    return {
        "tau1": params.tau1,
        "tau2": params.tau2,
        "alpha1": params.alpha1,
        "mean_tau": mean_lifetime(params),
    }


def run_gen(cfg, out: Path, timestamps: bool = False) -> None:
    """Write hist.csv, truth.csv, and the resolved config manifest."""
    axis = cfg.axis()
    if cfg.run_mode == "map":
        if cfg.kind != "bi":
            raise ConfigError("map mode requires the bi-exponential model")
        if cfg.peak_counts is None:
            raise ConfigError("map mode needs peak_counts")
        smap = generate_spatial_map(
            cfg.peak_counts, cfg.irf_spec(), axis, cfg.map_rows, cfg.map_cols, cfg.seed
        )
        counts = smap.counts.reshape(-1, axis.n_bins)
        shape = smap.shape
        rows = [
            _truth_row(smap.params_at(i, j))
            for i in range(shape[0])
            for j in range(shape[1])
        ]
    else:
        trials = generate_trial_set(
            cfg.param_ranges(),
            cfg.peak_counts if cfg.peak_counts is not None else 1.0,
            cfg.irf_spec(),
            axis,
            cfg.n_trials,
            cfg.seed,
            total_photons=cfg.total_photons,
        )
        counts = np.stack([h.counts for _, h in trials])
        shape = None
        rows = [_truth_row(p) for p, _ in trials]
    io.write_histogram_csv(out / HIST_FILE, counts, axis, shape)
    io.write_truth(out / TRUTH_FILE, rows, shape)
    io.write_config(out / MANIFEST_FILE, cfg)
    if timestamps:
        ts_dir = out / "ts"
        ts_dir.mkdir(exist_ok=True)
        for idx, row in enumerate(counts):
            hist = Histogram(row, axis)
            seed = derive_seed(cfg.seed, idx, 2)
            times = histogram_to_timestamps(hist, cfg.timestamp_mode, seed)
            io.write_timestamps(ts_dir / f"ts_{idx:06d}.bin", times)


def run_knots(cfg, out: Path) -> KnotSet:
    knots = make_knots(cfg)
    io.write_knots(out / KNOT_FILE, knots, cfg.knot_mode, cfg.aggregation)
    return knots


def _load_histograms(out: Path) -> tuple[np.ndarray, TimeAxis, Optional[tuple[int, int]]]:
    path = out / HIST_FILE
    if not path.exists():
        raise DataError(f"missing {path}; run gen first")
    return io.read_histogram_csv(path)


def _load_knots(out: Path) -> KnotSet:
    path = out / KNOT_FILE
    if not path.exists():
        raise DataError(f"missing {path}; run knots first")
    knots, _, _ = io.read_knots(path)
    return knots


def run_sketch(cfg, out: Path) -> None:
    """Sketch every pixel of hist.csv with the stored knots (FLP or FXP)."""
    counts, axis, _ = _load_histograms(out)
    basis = SplineBasis(_load_knots(out))
    photons = counts.sum(axis=1)
    if cfg.fxp_enabled:
        lut = build_fxp_lut(basis, cfg.lut_depth, axis.window)
        io.write_lut(out / LUT_FILE, lut)
        values = np.zeros((counts.shape[0], basis.m))
        for idx, row in enumerate(counts):
            if photons[idx] == 0:
                continue
            times = histogram_to_timestamps(Histogram(row, axis), "bin_center")
            values[idx] = fxp_sketch_from_timestamps(lut, times).values
        mode, depth = "fxp", cfg.lut_depth
    else:
        w = sketch_matrix(basis, axis)
        values = counts.astype(float) @ w.T
        mode, depth = "flp", 0
    io.write_sketches(out / SKETCH_FILE, values, photons, KNOT_FILE, mode, depth)


@dataclass(frozen=True)
class _PixelTask:
    index: int
    hist: np.ndarray
    sketch: Optional[np.ndarray]


def _midpoint_result(ctx) -> FitResult:
    lo, hi = ctx.box
    theta = (lo + hi) / 2.0
    if ctx.kind == "mono":
        params = MonoParams(float(theta[0]))
    else:
        params = BiParams(*map(float, theta))
    return FitResult(params, float("nan"), None, 0, False, None)


def _fit_one(method: str, task: _PixelTask, ctx) -> FitResult:
    if task.hist.sum() == 0:
        # nothing to fit; keep the row so pixel ids stay aligned
        return _midpoint_result(ctx)
    if method == "sketch":
        total = task.sketch.sum()
        if not (total > 0):
            return _midpoint_result(ctx)
        return fit_sketch(task.sketch / total, ctx)
    if method == "nlsf":
        return fit_histogram_nlsf(task.hist, ctx)
    if method == "mle":
        return fit_histogram_mle(task.hist, ctx)
    raise ConfigError(f"unknown fit method {method!r}")


def run_fit(cfg, out: Path, threads: Optional[int] = None) -> dict[str, Path]:
    """Fit every pixel with each selected method; one results CSV per method."""
    counts, axis, _ = _load_histograms(out)
    basis = None
    sketches = None
    if "sketch" in cfg.methods:
        sk_path = out / SKETCH_FILE
        if not sk_path.exists():
            raise DataError(f"missing {sk_path}; run sketch first")
        sketches, _, _ = io.read_sketches(sk_path)
        if sketches.shape[0] != counts.shape[0]:
            raise DataError("sketch file and histogram file disagree on pixel count")
        basis = SplineBasis(_load_knots(out))
    ctx = make_context(axis, cfg.irf_spec(), cfg.param_ranges(), basis)
    tasks = [
        _PixelTask(i, counts[i], None if sketches is None else sketches[i])
        for i in range(counts.shape[0])
    ]
    n_workers = threads if threads else default_threads()
    written: dict[str, Path] = {}
    for method in cfg.methods:
        if n_workers > 1:
            with ThreadPoolExecutor(max_workers=n_workers) as pool:
                results = list(pool.map(lambda t: _fit_one(method, t, ctx), tasks))
        else:
            results = [_fit_one(method, t, ctx) for t in tasks]
        path = out / results_file(method)
        io.write_results(path, [(t.index, r) for t, r in zip(tasks, results)])
        written[method] = path
    return written


def _estimates_from_results(rows: list[dict]) -> np.ndarray:
    return np.array([r["mean_tau"] for r in rows])


def run_eval(cfg, out: Path) -> list[tuple[RunKey, MetricReport]]:
    """Mean-lifetime metrics per method against truth.csv, saved to report.csv."""
    truth_rows, shape = io.read_truth(out / TRUTH_FILE)
    gt = np.array([r["mean_tau"] for r in truth_rows])
    batch = []
    sigma = cfg.irf_spec().sigma
    for method in cfg.methods:
        path = out / results_file(method)
        if not path.exists():
            raise DataError(f"missing {path}; run fit first")
        rows = io.read_results(path)
        if len(rows) != gt.size:
            raise DataError(f"{path}: {len(rows)} rows but truth has {gt.size}")
        est = _estimates_from_results(rows)
        key = RunKey(
            method=method,
            m=cfg.m,
            a=_reference_amplitude(cfg),
            sigma_irf=sigma,
            n_bins=cfg.n_bins,
            depth=cfg.lut_depth if cfg.fxp_enabled else None,
        )
        if shape is not None:
            batch.append((key, est, gt, est.reshape(shape), gt.reshape(shape)))
        else:
            batch.append((key, est, gt))
    return assemble_report(batch, out / REPORT_FILE)


@dataclass(frozen=True)
class _RealCounts:
    """Duck-typed histogram carrying a real-valued curve (for IRF phasors)."""

    counts: np.ndarray
    axis: TimeAxis


def run_phasor(cfg, out: Path) -> int:
    """Raw and IRF-corrected first-harmonic phasors per pixel; returns rows written."""
    import csv
    import warnings

    counts, axis, _ = _load_histograms(out)
    irf_point = phasor_from_histogram(_RealCounts(build_irf(cfg.irf_spec(), axis), axis))
    written = 0
    with open(out / PHASOR_FILE, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pixel_id", "photons", "g", "s", "g_corrected", "s_corrected"])
        for idx, row in enumerate(counts):
            if row.sum() == 0:
                warnings.warn(f"pixel {idx} is empty; skipped")
                continue
            p = phasor_from_histogram(Histogram(row, axis))
            c = irf_correct_phasor(p, irf_point)
            writer.writerow(
                [idx, p.photon_count, repr(p.g), repr(p.s), repr(c.g), repr(c.s)]
            )
            written += 1
    return written


def run_lut_bench(cfg, out: Path) -> list[tuple[RunKey, MetricReport]]:
    """Sketch-fit accuracy for the FLP path and each LUT depth, on one dataset.

    The same histograms and knots are reused for every row, so the depth
    sweep isolates quantization alone.
    """
    axis = cfg.axis()
    if cfg.run_mode == "map":
        if cfg.peak_counts is None:
            raise ConfigError("map mode needs peak_counts")
        smap = generate_spatial_map(
            cfg.peak_counts, cfg.irf_spec(), axis, cfg.map_rows, cfg.map_cols, cfg.seed
        )
        counts = smap.counts.reshape(-1, axis.n_bins)
        gt = smap.mean_tau.ravel()
        shape = smap.shape
    else:
        trials = generate_trial_set(
            cfg.param_ranges(),
            cfg.peak_counts if cfg.peak_counts is not None else 1.0,
            cfg.irf_spec(),
            axis,
            cfg.n_trials,
            cfg.seed,
            total_photons=cfg.total_photons,
        )
        counts = np.stack([h.counts for _, h in trials])
        gt = np.array([mean_lifetime(p) for p, _ in trials])
        shape = None
    basis = SplineBasis(make_knots(cfg))
    ctx = make_context(axis, cfg.irf_spec(), cfg.param_ranges(), basis)

    def fit_rows(values: np.ndarray) -> np.ndarray:
        est = np.empty(values.shape[0])
        for i in range(values.shape[0]):
            s = values[i]
            est[i] = fit_sketch(s / s.sum(), ctx).mean_tau
        return est

    streams = [
        histogram_to_timestamps(Histogram(row, axis), "bin_center") for row in counts
    ]
    batch = []
    flp = counts.astype(float) @ ctx.w.T
    est = fit_rows(flp)
    key = RunKey("sketch-flp", m=cfg.m, a=_reference_amplitude(cfg),
                 sigma_irf=cfg.irf_spec().sigma, n_bins=cfg.n_bins, depth=None)
    if shape is not None:
        batch.append((key, est, gt, est.reshape(shape), gt.reshape(shape)))
    else:
        batch.append((key, est, gt))
    for depth in STANDARD_LUT_DEPTHS:
        lut = build_fxp_lut(basis, depth, axis.window)
        vals = np.stack([fxp_sketch_from_timestamps(lut, ts).values for ts in streams])
        est = fit_rows(vals)
        key = RunKey("sketch-fxp", m=cfg.m, a=_reference_amplitude(cfg),
                     sigma_irf=cfg.irf_spec().sigma, n_bins=cfg.n_bins, depth=depth)
        if shape is not None:
            batch.append((key, est, gt, est.reshape(shape), gt.reshape(shape)))
        else:
            batch.append((key, est, gt))
    return assemble_report(batch, out / LUT_BENCH_FILE)
