"""Accuracy metrics and report assembly for estimator runs."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError


def scalar_metrics(estimates, truths) -> tuple[float, float, float]:
    """(MAE, RMSE, R^2) of estimates against ground truth."""
    est = np.asarray(estimates, dtype=float)
    gt = np.asarray(truths, dtype=float)
    if est.shape != gt.shape or est.size == 0:
        raise DataError("estimates and truths must be equal-length and non-empty")
    err = est - gt
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err**2)))
    ss_tot = float(np.sum((gt - gt.mean()) ** 2))
    if ss_tot <= 0:
        raise DataError("ground truth has zero variance; R^2 undefined")
    r2 = 1.0 - float(np.sum(err**2)) / ss_tot
    return mae, rmse, r2


def bland_altman(estimates, truths) -> tuple[float, float, float]:
    """(bias, lower LoA, upper LoA) with 1.96 sample standard deviations."""
    est = np.asarray(estimates, dtype=float)
    gt = np.asarray(truths, dtype=float)
    if est.shape != gt.shape or est.size < 2:
        raise DataError("need at least two paired values")
    d = est - gt
    bias = float(d.mean())
    spread = 1.96 * float(d.std(ddof=1))
    return bias, bias - spread, bias + spread


def ssim_map(est_map, gt_map, window: int = 8, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean structural similarity over all fully contained sliding windows.

    Dynamic range is taken from the ground-truth map; variances and the
    covariance use the sample (n - 1) normalization.
    """
    x = np.asarray(est_map, dtype=float)
    y = np.asarray(gt_map, dtype=float)
    if x.shape != y.shape or x.ndim != 2:
        raise DataError("maps must be 2-D arrays of equal shape")
    if min(x.shape) < window:
        raise DataError(f"maps smaller than the {window}x{window} SSIM window")
    rng = y.max() - y.min()
    if rng <= 0:
        raise DataError("ground-truth map has zero dynamic range")
    c1 = (k1 * rng) ** 2
    c2 = (k2 * rng) ** 2
    wx = sliding_window_view(x, (window, window))
    wy = sliding_window_view(y, (window, window))
    mx = wx.mean(axis=(-1, -2))
    my = wy.mean(axis=(-1, -2))
    n = window * window
    bessel = n / (n - 1)
    vx = bessel * ((wx * wx).mean(axis=(-1, -2)) - mx * mx)
    vy = bessel * ((wy * wy).mean(axis=(-1, -2)) - my * my)
    cov = bessel * ((wx * wy).mean(axis=(-1, -2)) - mx * my)
    score = ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / (
        (mx * mx + my * my + c1) * (vx + vy + c2)
    )
    return float(score.mean())


def relative_accuracy(estimates, truths, value_range: float) -> float:
    """1 - RMSE / range; range is the ground-truth spread of the quantity."""
    if not (value_range > 0):
        raise DataError("value range must be positive")
    est = np.asarray(estimates, dtype=float)
    gt = np.asarray(truths, dtype=float)
    if est.shape != gt.shape or est.size == 0:
        raise DataError("estimates and truths must be equal-length and non-empty")
    rmse = float(np.sqrt(np.mean((est - gt) ** 2)))
    return 1.0 - rmse / value_range


@dataclass(frozen=True)
class RunKey:
    """Identifies one estimator run in a report table."""

    method: str
    m: Optional[int] = None
    a: Optional[float] = None
    sigma_irf: Optional[float] = None
    n_bins: Optional[int] = None
    depth: Optional[int] = None


@dataclass(frozen=True)
class MetricReport:
    mae: float
    rmse: float
    r_squared: float
    bias: float
    loa_low: float
    loa_high: float
    ssim: Optional[float] = None
    relative_accuracy: Optional[float] = None


def evaluate_run(estimates, truths, est_map=None, gt_map=None) -> MetricReport:
    """Scalar metrics plus map metrics when 2-D maps are supplied."""
    mae, rmse, r2 = scalar_metrics(estimates, truths)
    bias, lo, hi = bland_altman(estimates, truths)
    ssim = rel = None
    if est_map is not None and gt_map is not None:
        ssim = ssim_map(est_map, gt_map)
        gt_arr = np.asarray(gt_map, dtype=float)
        rel = relative_accuracy(
            np.asarray(est_map, dtype=float).ravel(),
            gt_arr.ravel(),
            float(gt_arr.max() - gt_arr.min()),
        )
    return MetricReport(mae, rmse, r2, bias, lo, hi, ssim, rel)


REPORT_COLUMNS = [
    "method",
    "m",
    "a",
    "sigma_irf",
    "n_bins",
    "depth",
    "mae",
    "rmse",
    "r_squared",
    "bias",
    "loa_low",
    "loa_high",
    "ssim",
    "relative_accuracy",
]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        # repr(np.float64(x)) is "np.float64(x)"; coerce subclasses first
        return repr(float(v))
    return str(v)


def assemble_report(rows, path=None) -> list[tuple[RunKey, MetricReport]]:
    """Evaluate a batch of runs and optionally serialize the report table.

    Each row is (RunKey, estimates, truths) or
    (RunKey, estimates, truths, est_map, gt_map).
    """
    rows = list(rows)
    if not rows:
        raise DataError("no runs to report")
    out = []
    for row in rows:
        key, est, gt = row[0], row[1], row[2]
        maps = row[3:5] if len(row) >= 5 else (None, None)
        out.append((key, evaluate_run(est, gt, *maps)))
    if path is not None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPORT_COLUMNS)
            for key, rep in out:
                writer.writerow(
                    [
                        key.method,
                        _fmt(key.m),
                        _fmt(key.a),
                        _fmt(key.sigma_irf),
                        _fmt(key.n_bins),
                        _fmt(key.depth),
                        _fmt(rep.mae),
                        _fmt(rep.rmse),
                        _fmt(rep.r_squared),
                        _fmt(rep.bias),
                        _fmt(rep.loa_low),
                        _fmt(rep.loa_high),
                        _fmt(rep.ssim),
                        _fmt(rep.relative_accuracy),
                    ]
                )
    return out
