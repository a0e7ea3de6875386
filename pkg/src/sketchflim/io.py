"""On-disk formats: histogram CSV, timestamp binaries, knot/sketch/LUT/result
files, and the INI experiment configuration.

Float columns are serialized with repr() so that a write/read round trip is
exact, and every writer emits rows in a fixed order so that identical runs
produce byte-identical files.
"""

from __future__ import annotations

import configparser
import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .decay import BiRanges, MonoRanges, ParamRanges, TimeAxis, IrfSpec
from .errors import ConfigError, DataError
from .fisher import DEFAULT_EPSILON, KnotSet
from .sketch import FxpLut

TS_MAGIC = b"SKTS"
TS_VERSION = 1
LUT_MAGIC = b"SKLU"


def _header_fields(line: str) -> dict[str, str]:
    if not line.startswith("#"):
        raise DataError(f"missing '#' header line, got: {line[:40]!r}")
    out = {}
    for token in line[1:].split():
        if "=" not in token:
            raise DataError(f"bad header token {token!r}")
        k, _, v = token.partition("=")
        out[k] = v
    return out


# -- histogram CSV -----------------------------------------------------------

def write_histogram_csv(
    path, counts: np.ndarray, axis: TimeAxis, shape: Optional[tuple[int, int]] = None
) -> None:
    """One row of N integer counts per pixel, bin width recorded in ps."""
    counts = np.asarray(counts)
    if counts.ndim == 1:
        counts = counts[None, :]
    if counts.shape[1] != axis.n_bins:
        raise DataError("counts width does not match axis")
    header = f"# n_bins={axis.n_bins} bin_width_ps={axis.bin_width * 1000.0!r}"
    if shape is not None:
        header += f" rows={shape[0]} cols={shape[1]}"
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        writer = csv.writer(fh)
        for row in counts:
            writer.writerow([int(v) for v in row])


def read_histogram_csv(path) -> tuple[np.ndarray, TimeAxis, Optional[tuple[int, int]]]:
    with open(path, newline="") as fh:
        meta = _header_fields(fh.readline())
        try:
            n_bins = int(meta["n_bins"])
            width_ns = float(meta["bin_width_ps"]) / 1000.0
        except (KeyError, ValueError) as exc:
            raise DataError(f"bad histogram header: {exc}") from exc
        rows = []
        for lineno, row in enumerate(csv.reader(fh), start=2):
            if not row:
                continue
            if len(row) != n_bins:
                raise DataError(f"line {lineno}: expected {n_bins} columns, got {len(row)}")
            try:
                rows.append([int(v) for v in row])
            except ValueError as exc:
                raise DataError(f"line {lineno}: non-integer count ({exc})") from exc
    if not rows:
        raise DataError("histogram file contains no pixels")
    counts = np.array(rows, dtype=np.int64)
    if np.any(counts < 0):
        raise DataError("negative counts in histogram file")
    shape = None
    if "rows" in meta and "cols" in meta:
        shape = (int(meta["rows"]), int(meta["cols"]))
        if shape[0] * shape[1] != counts.shape[0]:
            raise DataError("rows*cols does not match pixel count")
    return counts, TimeAxis(n_bins, width_ns), shape


# -- timestamp binary --------------------------------------------------------

def write_timestamps(path, times: np.ndarray) -> None:
    times = np.asarray(times, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(TS_MAGIC)
        fh.write(bytes([TS_VERSION]))
        fh.write(struct.pack("<Q", times.size))
        fh.write(times.tobytes())


def read_timestamps(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 13 or raw[:4] != TS_MAGIC:
        raise DataError(f"{path}: not a timestamp stream file")
    if raw[4] != TS_VERSION:
        raise DataError(f"{path}: unsupported version {raw[4]}")
    (count,) = struct.unpack_from("<Q", raw, 5)
    payload = raw[13:]
    if len(payload) != 8 * count:
        raise DataError(f"{path}: expected {count} samples, payload holds {len(payload) // 8}")
    return np.frombuffer(payload, dtype="<f8").copy()


# -- knot file ---------------------------------------------------------------

def write_knots(path, knots: KnotSet, mode: str, agg: str) -> None:
    with open(path, "w") as fh:
        fh.write(f"# M={knots.m} mode={mode} agg={agg}\n")
        for b in knots.boundaries:
            fh.write(repr(float(b)) + "\n")


def read_knots(path) -> tuple[KnotSet, str, str]:
    with open(path) as fh:
        meta = _header_fields(fh.readline())
        values = [float(line) for line in fh if line.strip()]
    try:
        m = int(meta["M"])
        mode = meta["mode"]
        agg = meta["agg"]
    except KeyError as exc:
        raise DataError(f"knot header missing {exc}") from exc
    if mode not in ("fisher", "uniform"):
        raise DataError(f"bad knot mode {mode!r}")
    if agg not in ("average", "max"):
        raise DataError(f"bad aggregation {agg!r}")
    if len(values) != m + 2:
        raise DataError(f"expected {m + 2} boundaries, found {len(values)}")
    return KnotSet(np.array(values)), mode, agg


# -- sketch CSV --------------------------------------------------------------

def write_sketches(
    path,
    values: np.ndarray,
    photon_counts: np.ndarray,
    knots_path: str,
    mode: str = "flp",
    depth: int = 0,
) -> None:
    """M real channels plus a trailing photon-count column per pixel."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    photon_counts = np.asarray(photon_counts)
    if values.shape[0] != photon_counts.size:
        raise DataError("sketch rows and photon counts differ in length")
    if mode not in ("flp", "fxp"):
        raise DataError(f"bad sketch mode {mode!r}")
    with open(path, "w", newline="") as fh:
        fh.write(f"# m={values.shape[1]} knots={knots_path} mode={mode} depth={depth}\n")
        writer = csv.writer(fh)
        for row, p in zip(values, photon_counts):
            writer.writerow([repr(float(v)) for v in row] + [int(p)])


def read_sketches(path) -> tuple[np.ndarray, np.ndarray, dict]:
    with open(path, newline="") as fh:
        meta = _header_fields(fh.readline())
        try:
            m = int(meta["m"])
        except (KeyError, ValueError) as exc:
            raise DataError(f"bad sketch header: {exc}") from exc
        values, photons = [], []
        for lineno, row in enumerate(csv.reader(fh), start=2):
            if not row:
                continue
            if len(row) != m + 1:
                raise DataError(f"line {lineno}: expected {m + 1} columns")
            values.append([float(v) for v in row[:m]])
            photons.append(int(row[m]))
    if not values:
        raise DataError("sketch file contains no pixels")
    return np.array(values), np.array(photons, dtype=np.int64), meta


# -- LUT dump ----------------------------------------------------------------

def write_lut(path, lut: FxpLut) -> None:
    with open(path, "wb") as fh:
        fh.write(LUT_MAGIC)
        fh.write(struct.pack("<II", lut.m, lut.depth))
        fh.write(np.ascontiguousarray(lut.table, dtype="<u2").tobytes())


def read_lut(path, window: float) -> FxpLut:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != LUT_MAGIC:
        raise DataError(f"{path}: not a LUT dump")
    m, depth = struct.unpack_from("<II", raw, 4)
    payload = raw[12:]
    if len(payload) != 2 * m * depth:
        raise DataError(f"{path}: truncated LUT payload")
    table = np.frombuffer(payload, dtype="<u2").reshape(m, depth).copy()
    return FxpLut(table.astype(np.uint16), window)


# -- results CSV -------------------------------------------------------------

RESULT_COLUMNS = [
    "pixel_id",
    "tau1",
    "tau2",
    "alpha1",
    "mean_tau",
    "amplitude",
    "objective",
    "chi2",
    "iterations",
    "converged",
]


def write_results(path, results) -> None:
    """results: iterable of (pixel_id, FitResult), written in given order."""
    from .decay import MonoParams

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for pixel_id, res in results:
            p = res.params
            if isinstance(p, MonoParams):
                tau1, tau2, alpha1 = repr(p.tau), "", ""
            else:
                tau1, tau2, alpha1 = repr(p.tau1), repr(p.tau2), repr(p.alpha1)
            writer.writerow(
                [
                    int(pixel_id),
                    tau1,
                    tau2,
                    alpha1,
                    repr(res.mean_tau),
                    "" if res.amplitude is None else repr(res.amplitude),
                    repr(res.objective),
                    "" if res.chi2 is None else repr(res.chi2),
                    res.iterations,
                    int(res.converged),
                ]
            )


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for row in reader:
            rows.append(
                {
                    "pixel_id": int(row["pixel_id"]),
                    "tau1": float(row["tau1"]) if row["tau1"] else None,
                    "tau2": float(row["tau2"]) if row["tau2"] else None,
                    "alpha1": float(row["alpha1"]) if row["alpha1"] else None,
                    "mean_tau": float(row["mean_tau"]),
                    "amplitude": float(row["amplitude"]) if row["amplitude"] else None,
                    "objective": float(row["objective"]),
                    "chi2": float(row["chi2"]) if row["chi2"] else None,
                    "iterations": int(row["iterations"]),
                    "converged": bool(int(row["converged"])),
                }
            )
    if not rows:
        raise DataError("results file contains no rows")
    return rows


# -- truth CSV ---------------------------------------------------------------

def write_truth(path, rows, shape: Optional[tuple[int, int]] = None) -> None:
    """rows: iterable of dicts with tau1 [, tau2, alpha1] and mean_tau."""
    with open(path, "w", newline="") as fh:
        if shape is not None:
            fh.write(f"# rows={shape[0]} cols={shape[1]}\n")
        writer = csv.writer(fh)
        writer.writerow(["pixel_id", "tau1", "tau2", "alpha1", "mean_tau"])
        for i, row in enumerate(rows):
            writer.writerow(
                [
                    i,
                    repr(float(row["tau1"])),
                    "" if row.get("tau2") is None else repr(float(row["tau2"])),
                    "" if row.get("alpha1") is None else repr(float(row["alpha1"])),
                    repr(float(row["mean_tau"])),
                ]
            )


def read_truth(path) -> tuple[list[dict], Optional[tuple[int, int]]]:
    shape = None
    with open(path, newline="") as fh:
        first = fh.readline()
        if first.startswith("#"):
            meta = _header_fields(first)
            shape = (int(meta["rows"]), int(meta["cols"]))
            header = fh.readline()
        else:
            header = first
        names = next(csv.reader([header]))
        rows = []
        for row in csv.reader(fh):
            if not row:
                continue
            d = dict(zip(names, row))
            rows.append(
                {
                    "pixel_id": int(d["pixel_id"]),
                    "tau1": float(d["tau1"]),
                    "tau2": float(d["tau2"]) if d["tau2"] else None,
                    "alpha1": float(d["alpha1"]) if d["alpha1"] else None,
                    "mean_tau": float(d["mean_tau"]),
                }
            )
    if not rows:
        raise DataError("truth file contains no rows")
    return rows, shape


# -- experiment configuration -------------------------------------------------

KNOWN_METHODS = ("sketch", "nlsf", "mle")


@dataclass(frozen=True)
class ExperimentConfig:
    n_bins: int = 256
    window_ns: float = 10.0
    fwhm_ns: float = 0.1
    peak_ns: float = 1.0
    kind: str = "bi"
    tau_min: float = 0.2
    tau_max: float = 8.0
    tau1_min: float = 0.2
    tau1_max: float = 2.0
    tau2_min: float = 2.0
    tau2_max: float = 8.0
    alpha_min: float = 0.05
    alpha_max: float = 0.95
    peak_counts: Optional[float] = 500.0
    total_photons: Optional[float] = None
    timestamp_mode: str = "bin_center"
    m: int = 4
    knot_mode: str = "fisher"
    aggregation: str = "average"
    n_grid: int = 500
    epsilon: float = DEFAULT_EPSILON
    fxp_enabled: bool = False
    lut_depth: int = 256
    methods: tuple[str, ...] = ("sketch", "nlsf", "mle")
    run_mode: str = "trials"
    n_trials: int = 100
    map_rows: int = 32
    map_cols: int = 32
    seed: int = 0
    out_dir: Optional[str] = None

    def axis(self) -> TimeAxis:
        return TimeAxis.from_window(self.n_bins, self.window_ns)

    def irf_spec(self) -> IrfSpec:
        return IrfSpec(self.fwhm_ns, self.peak_ns)

    def param_ranges(self) -> ParamRanges:
        if self.kind == "mono":
            return MonoRanges(self.tau_min, self.tau_max)
        return BiRanges(
            self.tau1_min,
            self.tau1_max,
            self.tau2_min,
            self.tau2_max,
            self.alpha_min,
            self.alpha_max,
        )


_SCHEMA = {
    "axis": {"n_bins": ("n_bins", int), "window_ns": ("window_ns", float)},
    "irf": {"fwhm_ns": ("fwhm_ns", float), "peak_ns": ("peak_ns", float)},
    "model": {"kind": ("kind", str)},
    "ranges": {
        "tau_min": ("tau_min", float),
        "tau_max": ("tau_max", float),
        "tau1_min": ("tau1_min", float),
        "tau1_max": ("tau1_max", float),
        "tau2_min": ("tau2_min", float),
        "tau2_max": ("tau2_max", float),
        "alpha_min": ("alpha_min", float),
        "alpha_max": ("alpha_max", float),
    },
    "acquisition": {
        "peak_counts": ("peak_counts", float),
        "total_photons": ("total_photons", float),
        "timestamp_mode": ("timestamp_mode", str),
    },
    "sketch": {
        "m": ("m", int),
        "knots": ("knot_mode", str),
        "aggregation": ("aggregation", str),
        "n_grid": ("n_grid", int),
        "epsilon": ("epsilon", float),
    },
    "fxp": {"enabled": ("fxp_enabled", bool), "depth": ("lut_depth", int)},
    "fit": {"methods": ("methods", "methods")},
    "run": {
        "mode": ("run_mode", str),
        "n_trials": ("n_trials", int),
        "map_rows": ("map_rows", int),
        "map_cols": ("map_cols", int),
        "out_dir": ("out_dir", str),
    },
    "seed": {"value": ("seed", int)},
}


def parse_config(path) -> ExperimentConfig:
    """Load and validate an INI experiment configuration."""
    parser = configparser.ConfigParser()
    read = parser.read(str(path))
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    values: dict = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser[section].items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            attr, conv = _SCHEMA[section][key]
            try:
                if conv is bool:
                    values[attr] = parser[section].getboolean(key)
                elif conv == "methods":
                    methods = tuple(v.strip() for v in raw.split(",") if v.strip())
                    values[attr] = methods
                else:
                    values[attr] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
    if "peak_counts" in values and "total_photons" in values:
        raise ConfigError("give either peak_counts or total_photons, not both")
    if "total_photons" in values:
        values.setdefault("peak_counts", None)
    cfg = ExperimentConfig(**values)
    return validate_config(cfg)


def validate_config(cfg: ExperimentConfig) -> ExperimentConfig:
    if cfg.kind not in ("mono", "bi"):
        raise ConfigError(f"model kind must be mono or bi, got {cfg.kind!r}")
    if cfg.knot_mode not in ("fisher", "uniform"):
        raise ConfigError(f"knots must be fisher or uniform, got {cfg.knot_mode!r}")
    if cfg.aggregation not in ("average", "max"):
        raise ConfigError(f"aggregation must be average or max, got {cfg.aggregation!r}")
    if cfg.timestamp_mode not in ("bin_center", "uniform_jitter"):
        raise ConfigError(f"bad timestamp mode {cfg.timestamp_mode!r}")
    if cfg.run_mode not in ("trials", "map"):
        raise ConfigError(f"run mode must be trials or map, got {cfg.run_mode!r}")
    for name in cfg.methods:
        if name not in KNOWN_METHODS:
            raise ConfigError(f"unknown fit method {name!r}")
    if not cfg.methods:
        raise ConfigError("no fit methods selected")
    if cfg.m < 2:
        raise ConfigError(f"sketch needs at least 2 channels, got m={cfg.m}")
    if cfg.n_grid < 1:
        raise ConfigError("n_grid must be at least 1")
    if not (cfg.epsilon > 0):
        raise ConfigError("epsilon must be positive")
    if cfg.lut_depth < 1:
        raise ConfigError("LUT depth must be positive")
    if cfg.n_trials < 1:
        raise ConfigError("n_trials must be at least 1")
    if cfg.peak_counts is None and cfg.total_photons is None:
        raise ConfigError("need peak_counts or total_photons")
    if cfg.peak_counts is not None and not (cfg.peak_counts > 0):
        raise ConfigError("peak_counts must be positive")
    if cfg.total_photons is not None and not (cfg.total_photons > 0):
        raise ConfigError("total_photons must be positive")
    if cfg.seed < 0:
        raise ConfigError("seed must be non-negative")
    try:
        cfg.axis()
        cfg.irf_spec()
        cfg.param_ranges()
    except DataError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def write_config(path, cfg: ExperimentConfig) -> None:
    """Serialize the resolved configuration (the reproducibility manifest)."""
    parser = configparser.ConfigParser()
    parser["axis"] = {"n_bins": str(cfg.n_bins), "window_ns": repr(cfg.window_ns)}
    parser["irf"] = {"fwhm_ns": repr(cfg.fwhm_ns), "peak_ns": repr(cfg.peak_ns)}
    parser["model"] = {"kind": cfg.kind}
    if cfg.kind == "mono":
        parser["ranges"] = {"tau_min": repr(cfg.tau_min), "tau_max": repr(cfg.tau_max)}
    else:
        parser["ranges"] = {
            "tau1_min": repr(cfg.tau1_min),
            "tau1_max": repr(cfg.tau1_max),
            "tau2_min": repr(cfg.tau2_min),
            "tau2_max": repr(cfg.tau2_max),
            "alpha_min": repr(cfg.alpha_min),
            "alpha_max": repr(cfg.alpha_max),
        }
    acq = {"timestamp_mode": cfg.timestamp_mode}
    if cfg.peak_counts is not None:
        acq["peak_counts"] = repr(cfg.peak_counts)
    if cfg.total_photons is not None:
        acq["total_photons"] = repr(cfg.total_photons)
    parser["acquisition"] = acq
    parser["sketch"] = {
        "m": str(cfg.m),
        "knots": cfg.knot_mode,
        "aggregation": cfg.aggregation,
        "n_grid": str(cfg.n_grid),
        "epsilon": repr(cfg.epsilon),
    }
    parser["fxp"] = {"enabled": str(cfg.fxp_enabled).lower(), "depth": str(cfg.lut_depth)}
    parser["fit"] = {"methods": ", ".join(cfg.methods)}
    run = {
        "mode": cfg.run_mode,
        "n_trials": str(cfg.n_trials),
        "map_rows": str(cfg.map_rows),
        "map_cols": str(cfg.map_cols),
    }
    if cfg.out_dir is not None:
        run["out_dir"] = cfg.out_dir
    parser["run"] = run
    parser["seed"] = {"value": str(cfg.seed)}
    with open(path, "w") as fh:
        parser.write(fh)
