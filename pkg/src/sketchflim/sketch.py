"""Linear spline sketches of photon streams, fixed-point LUT path, phasors.

A sketch compresses a photon stream (or histogram) into M numbers: the sums
of M overlapping triangle basis functions evaluated at each arrival time.
Basis i rises over [xi_i, xi_{i+1}] and falls over [xi_{i+1}, xi_{i+2}], so
each photon touches at most two channels.  The fixed-point path replaces the
ramp evaluation with a Q8.8 lookup table indexed by a D-cell quantization of
the arrival time, accumulating in 64-bit integers for bit-exact results.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .decay import Histogram, TimeAxis
from .errors import DataError, NumericError
from .fisher import KnotSet

FXP_FRACTION_BITS = 8
FXP_ONE = 1 << FXP_FRACTION_BITS
STANDARD_LUT_DEPTHS = (16, 32, 64, 128, 256)


@dataclass(frozen=True)
class SplineBasis:
    """M triangle basis functions over M + 2 strictly increasing boundaries."""

    knots: KnotSet

    @property
    def m(self) -> int:
        return self.knots.m


@dataclass(frozen=True)
class SketchVector:
    values: np.ndarray
    photon_count: int


def _interval_split(knots: KnotSet, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Clamp times into the knot span; return (interval index, rising fraction)."""
    b = knots.boundaries
    t = np.clip(np.asarray(times, dtype=float), b[0], b[-1])
    j = np.searchsorted(b, t, side="right") - 1
    j = np.minimum(j, b.size - 2)  # t == xi_{M+1} belongs to the last interval
    w = (t - b[j]) / (b[j + 1] - b[j])
    return j, w


def basis_matrix(basis: SplineBasis, times: np.ndarray) -> np.ndarray:
    """Evaluate all M basis functions at the given times, shape (M, len).

    The falling branch is computed as 1 - rising fraction of the shared
    interval, so the two basis values covering any point sum to at most 1
    in floating point.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    m = basis.m
    j, w = _interval_split(basis.knots, times)
    phi = np.zeros((m, times.size))
    cols = np.arange(times.size)
    rising = j <= m - 1
    phi[j[rising], cols[rising]] = w[rising]
    falling = j >= 1
    phi[j[falling] - 1, cols[falling]] += 1.0 - w[falling]
    return phi


def basis_eval(basis: SplineBasis, t: float) -> np.ndarray:
    """All M basis values at a single time (clamped into the knot span)."""
    return basis_matrix(basis, np.array([t]))[:, 0]


def sketch_from_timestamps(basis: SplineBasis, times: np.ndarray) -> SketchVector:
    """Accumulate the M-channel sketch over a photon stream in one pass."""
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise DataError("cannot sketch an empty photon stream")
    m = basis.m
    j, w = _interval_split(basis.knots, times)
    s = np.zeros(m)
    rising = j <= m - 1
    np.add.at(s, j[rising], w[rising])
    falling = j >= 1
    np.add.at(s, j[falling] - 1, 1.0 - w[falling])
    return SketchVector(s, times.size)


def sketch_matrix(basis: SplineBasis, axis: TimeAxis) -> np.ndarray:
    """M x N matrix of basis values at bin centers; sketch = W @ counts."""
    return basis_matrix(basis, axis.centers)


def sketch_from_histogram(w: np.ndarray, hist: Histogram) -> SketchVector:
    """Matrix-path sketch of a binned histogram."""
    w = np.asarray(w, dtype=float)
    counts = hist.counts
    if w.ndim != 2 or w.shape[1] != counts.size:
        raise DataError(
            f"sketch matrix shape {w.shape} does not match {counts.size} bins"
        )
    return SketchVector(w @ counts.astype(float), hist.total)


def normalize_sketch(s) -> np.ndarray:
    """Scale sketch values to unit L1 mass (values are non-negative)."""
    values = s.values if isinstance(s, SketchVector) else np.asarray(s, dtype=float)
    total = values.sum()
    if not (total > 0):
        raise DataError("cannot normalize a sketch with zero mass")
    return values / total


@dataclass(frozen=True)
class FxpLut:
    """Q8.8 basis lookup table over D equal cells of the [0, window) span."""

    table: np.ndarray  # (m, depth) uint16
    window: float

    def __post_init__(self):
        t = np.asarray(self.table)
        if t.dtype != np.uint16 or t.ndim != 2:
            raise DataError("LUT table must be a 2-D uint16 array")
        if not (self.window > 0):
            raise DataError("window must be positive")
        object.__setattr__(self, "table", t)

    @property
    def m(self) -> int:
        return self.table.shape[0]

    @property
    def depth(self) -> int:
        return self.table.shape[1]


def build_fxp_lut(basis: SplineBasis, depth: int, window: float) -> FxpLut:
    """Tabulate the basis at D cell centers, quantized to Q8.8.

    Quantization rounds half away from zero and clamps to the uint16 range.
    Depths outside the supported benchmark set still work but draw a warning.
    """
    if depth < 1:
        raise DataError(f"LUT depth must be positive, got {depth}")
    if not (window > 0):
        raise DataError("window must be positive")
    if depth not in STANDARD_LUT_DEPTHS:
        warnings.warn(f"unusual LUT depth {depth}", stacklevel=2)
    t_cells = (np.arange(depth) + 0.5) * (window / depth)
    phi = basis_matrix(basis, t_cells)
    q = np.clip(np.floor(phi * FXP_ONE + 0.5), 0, np.iinfo(np.uint16).max)
    return FxpLut(q.astype(np.uint16), window)


def fxp_accumulate(lut: FxpLut, times: np.ndarray) -> np.ndarray:
    """Integer Q8.8 channel accumulators for a photon stream.

    Accumulators from disjoint stream chunks can be added exactly, which is
    what makes the fixed-point path reproducible across any work split.
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise DataError("cannot sketch an empty photon stream")
    if times.size * (1 << 16) >= np.iinfo(np.int64).max:
        raise NumericError("photon count would overflow the 64-bit accumulators")
    pos = np.floor(np.clip(times, 0.0, None) * (lut.depth / lut.window))
    cells = np.clip(pos.astype(np.int64), 0, lut.depth - 1)
    per_cell = np.bincount(cells, minlength=lut.depth)
    return lut.table.astype(np.int64) @ per_cell


def fxp_sketch_from_timestamps(lut: FxpLut, times: np.ndarray) -> SketchVector:
    """Fixed-point sketch: integer accumulation, one final divide by 256."""
    acc = fxp_accumulate(lut, times)
    return SketchVector(acc / float(FXP_ONE), np.asarray(times).size)


@dataclass(frozen=True)
class PhasorPoint:
    """First (or m-th) harmonic Fourier coordinates of a decay."""

    g: float
    s: float
    photon_count: int
    harmonic: int = 1


_SPLIT = 134217729.0  # 2**27 + 1, Veltkamp splitting constant


def _exact_dot(w: np.ndarray, v: np.ndarray) -> float:
    """Correctly rounded sum of w[k] * v[k].

    Dekker two-product: each product is split into its rounded value plus
    exact error term, and fsum rounds the true total once.  This makes the
    histogram-weighted phasor bit-identical to per-photon accumulation.
    """
    p = w * v
    wh = w * _SPLIT
    wh = wh - (wh - w)
    wl = w - wh
    vh = v * _SPLIT
    vh = vh - (vh - v)
    vl = v - vh
    err = ((wh * vh - p) + wh * vl + wl * vh) + wl * vl
    return math.fsum(np.concatenate([p, err]).tolist())


def phasor_from_timestamps(
    times: np.ndarray, window: float, harmonic: int = 1
) -> PhasorPoint:
    """Per-photon phasor: averaged cosine/sine at the harmonic frequency."""
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise DataError("cannot compute a phasor of an empty stream")
    if harmonic < 1:
        raise DataError(f"harmonic must be >= 1, got {harmonic}")
    if not (window > 0):
        raise DataError("window must be positive")
    w = 2.0 * math.pi * harmonic / window
    g = math.fsum(np.cos(w * times).tolist()) / times.size
    s = math.fsum(np.sin(w * times).tolist()) / times.size
    return PhasorPoint(g, s, times.size, harmonic)


def phasor_from_histogram(hist, harmonic: int = 1) -> PhasorPoint:
    """Histogram phasor: count-weighted cosine/sine sums over bin centers.

    Matches phasor_from_timestamps on a bin-center expansion of the same
    histogram bit-for-bit (both sides round the identical true sum once).
    Counts may be real-valued, e.g. noiseless expectation curves.
    """
    if harmonic < 1:
        raise DataError(f"harmonic must be >= 1, got {harmonic}")
    counts = np.asarray(hist.counts, dtype=float)
    total = float(counts.sum())
    if not (total > 0):
        raise DataError("cannot compute a phasor of an empty histogram")
    w = 2.0 * math.pi * harmonic / hist.axis.window
    centers = hist.axis.centers
    g = _exact_dot(counts, np.cos(w * centers)) / total
    s = _exact_dot(counts, np.sin(w * centers)) / total
    return PhasorPoint(g, s, int(round(total)), harmonic)


def irf_correct_phasor(sample: PhasorPoint, irf: PhasorPoint) -> PhasorPoint:
    """Deconvolve the IRF in phasor space by complex division."""
    if sample.harmonic != irf.harmonic:
        raise DataError("sample and IRF phasors use different harmonics")
    z_irf = complex(irf.g, irf.s)
    if abs(z_irf) <= 1e-9:
        raise NumericError("IRF phasor is degenerate (magnitude ~ 0)")
    z = complex(sample.g, sample.s) / z_irf
    return PhasorPoint(z.real, z.imag, sample.photon_count, sample.harmonic)


def analytic_mono_phasor(tau: float, window: float, harmonic: int = 1) -> PhasorPoint:
    """Closed-form phasor of an untruncated single-exponential decay.

    Lies on the universal semicircle (g - 1/2)^2 + s^2 = 1/4 for every
    positive lifetime.
    """
    if not (tau > 0):
        raise DataError(f"lifetime must be positive, got {tau}")
    if not (window > 0):
        raise DataError("window must be positive")
    u = 2.0 * math.pi * harmonic * tau / window
    den = 1.0 + u * u
    return PhasorPoint(1.0 / den, u / den, 0, harmonic)
