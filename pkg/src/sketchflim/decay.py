"""Forward model and synthetic data generation for TCSPC decay histograms.

Time is measured in nanoseconds throughout.  A histogram lives on a uniform
axis of N bins covering one laser period T, with bin centers
t_k = (k - 1/2) * dt.  The expected curve is the discrete convolution of a
Gaussian IRF with a mono- or bi-exponential decay, normalized so the peak
bin equals one; the amplitude A then plays the role of expected peak count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import DataError, NumericError

FWHM_TO_SIGMA = float(1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0))))


def derive_seed(base_seed: int, *indices: int) -> int:
    """Derive a child seed from a base seed and integer indices.

    Counter-style derivation: stable under reordering of the surrounding
    loops and independent of how many seeds were drawn before.
    """
    ss = np.random.SeedSequence((int(base_seed),) + tuple(int(i) for i in indices))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class TimeAxis:
    """Uniform time axis: n_bins bins of width bin_width (ns)."""

    n_bins: int
    bin_width: float
    centers: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n_bins < 8:
            raise DataError(f"need at least 8 bins, got {self.n_bins}")
        if not (self.bin_width > 0):
            raise DataError(f"bin width must be positive, got {self.bin_width}")
        c = (np.arange(1, self.n_bins + 1) - 0.5) * self.bin_width
        object.__setattr__(self, "centers", c)

    @property
    def window(self) -> float:
        """Total span T = n_bins * bin_width (ns)."""
        return self.n_bins * self.bin_width

    @classmethod
    def from_window(cls, n_bins: int, window: float) -> "TimeAxis":
        if not (window > 0):
            raise DataError(f"window must be positive, got {window}")
        return cls(n_bins, window / n_bins)


@dataclass(frozen=True)
class IrfSpec:
    """Gaussian instrument response: FWHM and peak position, both in ns."""

    fwhm: float
    peak_time: float
    shape: str = "gaussian"

    def __post_init__(self):
        if not (self.fwhm > 0):
            raise DataError(f"IRF fwhm must be positive, got {self.fwhm}")
        if self.shape != "gaussian":
            raise DataError(f"unsupported IRF shape: {self.shape!r}")

    @property
    def sigma(self) -> float:
        return self.fwhm * FWHM_TO_SIGMA


@dataclass(frozen=True)
class MonoParams:
    """Single-exponential decay with lifetime tau (ns)."""

    tau: float

    def __post_init__(self):
        if not (self.tau > 0):
            raise DataError(f"lifetime must be positive, got {self.tau}")


@dataclass(frozen=True)
class BiParams:
    """Two-exponential decay: fractions alpha1 and 1 - alpha1 on tau1 <= tau2."""

    tau1: float
    tau2: float
    alpha1: float

    def __post_init__(self):
        if not (self.tau1 > 0 and self.tau2 > 0):
            raise DataError("lifetimes must be positive")
        if self.tau1 > self.tau2:
            raise DataError(f"expected tau1 <= tau2, got {self.tau1} > {self.tau2}")
        if not (0.0 <= self.alpha1 <= 1.0):
            raise DataError(f"alpha1 must lie in [0, 1], got {self.alpha1}")


DecayParams = Union[MonoParams, BiParams]


@dataclass(frozen=True)
class MonoRanges:
    tau_min: float
    tau_max: float

    def __post_init__(self):
        if not (0 < self.tau_min < self.tau_max):
            raise DataError(f"bad mono range [{self.tau_min}, {self.tau_max}]")


@dataclass(frozen=True)
class BiRanges:
    """Parameter box for bi-exponential fits.

    The tau1 and tau2 boxes may touch but not overlap, which keeps the
    component ordering unambiguous everywhere inside the box.
    """

    tau1_min: float
    tau1_max: float
    tau2_min: float
    tau2_max: float
    alpha_min: float
    alpha_max: float

    def __post_init__(self):
        if not (0 < self.tau1_min < self.tau1_max):
            raise DataError("bad tau1 range")
        if not (0 < self.tau2_min < self.tau2_max):
            raise DataError("bad tau2 range")
        if self.tau1_max > self.tau2_min:
            raise DataError(
                f"tau1 range [{self.tau1_min}, {self.tau1_max}] overlaps "
                f"tau2 range [{self.tau2_min}, {self.tau2_max}]"
            )
        if not (0.0 <= self.alpha_min < self.alpha_max <= 1.0):
            raise DataError("bad alpha1 range")


ParamRanges = Union[MonoRanges, BiRanges]


@dataclass(frozen=True)
class Histogram:
    """Photon counts per bin on a given axis."""

    counts: np.ndarray
    axis: TimeAxis

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 1 or c.shape[0] != self.axis.n_bins:
            raise DataError(
                f"counts length {c.shape} does not match axis with {self.axis.n_bins} bins"
            )
        if np.any(c < 0):
            raise DataError("negative counts")
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def build_irf(spec: IrfSpec, axis: TimeAxis) -> np.ndarray:
    """Sample the Gaussian IRF at bin centers and normalize to unit sum.

    The exponent is shifted by its maximum before exponentiation so very
    narrow IRFs underflow to a clean single-bin spike instead of all zeros.
    """
    if not (0.0 <= spec.peak_time < axis.window):
        raise DataError(
            f"IRF peak {spec.peak_time} ns outside the [0, {axis.window}) ns window"
        )
    z = -0.5 * ((axis.centers - spec.peak_time) / spec.sigma) ** 2
    irf = np.exp(z - z.max())
    return irf / irf.sum()


def param_vector(params: DecayParams) -> np.ndarray:
    """Flatten decay parameters: [tau] for mono, [tau1, tau2, alpha1] for bi."""
    if isinstance(params, MonoParams):
        return np.array([params.tau])
    return np.array([params.tau1, params.tau2, params.alpha1])


def curve_from_vector(
    kind: str, theta: np.ndarray, irf: np.ndarray, axis: TimeAxis
) -> np.ndarray:
    """model_curve on a raw parameter vector, skipping dataclass checks.

    Finite differencing and solvers probe points a validated BiParams would
    reject (tau1 marginally above tau2, alpha1 a hair outside [0, 1]); the
    curve itself is well defined there as long as lifetimes stay positive.
    """
    t = axis.centers
    if kind == "mono":
        e = np.exp(-t / theta[0])
    elif kind == "bi":
        e = theta[2] * np.exp(-t / theta[0]) + (1.0 - theta[2]) * np.exp(-t / theta[1])
    else:
        raise DataError(f"unknown model kind: {kind!r}")
    g = np.convolve(irf, e)[: axis.n_bins]
    peak = g.max()
    if not np.isfinite(peak) or peak <= 0.0:
        raise NumericError("model curve vanished; parameters out of usable range")
    return g / peak


def model_curve(params: DecayParams, irf: np.ndarray, axis: TimeAxis) -> np.ndarray:
    """Peak-normalized model decay: IRF convolved with the exponential mix.

    The exponential basis decays from the window origin and the IRF sample
    vector carries the peak delay, so the convolved curve rises at the IRF
    peak position.  The full linear convolution is truncated to the first
    n_bins samples (no circular wrap-around), then scaled so max = 1.

    Parameters
    ----------
    params : MonoParams or BiParams
    irf : ndarray
        IRF sampled at bin centers (any positive scaling).
    axis : TimeAxis

    Returns
    -------
    ndarray of shape (n_bins,), peak value exactly 1.
    """
    irf = np.asarray(irf, dtype=float)
    if irf.shape != (axis.n_bins,):
        raise DataError("IRF length does not match axis")
    kind = "mono" if isinstance(params, MonoParams) else "bi"
    return curve_from_vector(kind, param_vector(params), irf, axis)


def expected_counts(a: float, curve: np.ndarray) -> np.ndarray:
    """Expected histogram A * g for amplitude A (expected peak count)."""
    if not (a > 0):
        raise DataError(f"amplitude must be positive, got {a}")
    return a * np.asarray(curve, dtype=float)


def amplitude_for_total(total_photons: float, curve: np.ndarray) -> float:
    """Amplitude giving the requested expected total photon count."""
    s = float(np.sum(curve))
    if not (total_photons > 0):
        raise DataError("total photon budget must be positive")
    if s <= 0:
        raise NumericError("curve has no mass")
    return total_photons / s


def sample_histogram(mu: np.ndarray, axis: TimeAxis, seed: int) -> Histogram:
    """Draw independent Poisson counts around the expected curve mu."""
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (axis.n_bins,):
        raise DataError("expected-curve length does not match axis")
    if np.any(~np.isfinite(mu)) or np.any(mu < 0):
        raise DataError("expected curve must be finite and non-negative")
    rng = np.random.default_rng(seed)
    return Histogram(rng.poisson(mu).astype(np.int64), axis)


def histogram_to_timestamps(
    hist: Histogram, mode: str = "bin_center", seed: int | None = None
) -> np.ndarray:
    """Expand a histogram into a photon arrival-time stream.

    mode="bin_center" repeats each bin center count-many times, which keeps
    the expansion exactly invertible by re-binning.  mode="uniform_jitter"
    spreads each photon uniformly within its bin; this needs a seed.
    """
    counts = hist.counts
    centers = hist.axis.centers
    if mode == "bin_center":
        return np.repeat(centers, counts)
    if mode == "uniform_jitter":
        if seed is None:
            raise DataError("uniform_jitter mode needs a seed")
        rng = np.random.default_rng(seed)
        base = np.repeat(centers, counts)
        return base + (rng.random(base.size) - 0.5) * hist.axis.bin_width
    raise DataError(f"unknown timestamp mode: {mode!r}")


def sample_params(ranges: ParamRanges, rng: np.random.Generator) -> DecayParams:
    """Draw decay parameters uniformly within the given box."""
    if isinstance(ranges, MonoRanges):
        return MonoParams(rng.uniform(ranges.tau_min, ranges.tau_max))
    return BiParams(
        tau1=rng.uniform(ranges.tau1_min, ranges.tau1_max),
        tau2=rng.uniform(ranges.tau2_min, ranges.tau2_max),
        alpha1=rng.uniform(ranges.alpha_min, ranges.alpha_max),
    )


def generate_trial_set(
    ranges: ParamRanges,
    a: float,
    irf_spec: IrfSpec,
    axis: TimeAxis,
    n_trials: int,
    seed: int,
    total_photons: float | None = None,
) -> list[tuple[DecayParams, Histogram]]:
    """Simulate n_trials independent (truth, noisy histogram) pairs.

    Each trial uses its own child seed derived from (seed, trial index), so
    any subset of trials can be regenerated without replaying the others.
    When total_photons is given it overrides the peak amplitude per trial so
    every trial carries the same expected photon budget.
    """
    if n_trials <= 0:
        raise DataError(f"n_trials must be positive, got {n_trials}")
    irf = build_irf(irf_spec, axis)
    out = []
    for i in range(n_trials):
        rng = np.random.default_rng(derive_seed(seed, i, 0))
        params = sample_params(ranges, rng)
        curve = model_curve(params, irf, axis)
        amp = a if total_photons is None else amplitude_for_total(total_photons, curve)
        mu = expected_counts(amp, curve)
        hist = sample_histogram(mu, axis, derive_seed(seed, i, 1))
        out.append((params, hist))
    return out


@dataclass(frozen=True)
class SpatialMap:
    """Synthetic bi-exponential parameter map with per-pixel histograms."""

    tau1: np.ndarray
    tau2: np.ndarray
    alpha1: np.ndarray
    counts: np.ndarray  # (rows, cols, n_bins) int64
    axis: TimeAxis

    @property
    def shape(self) -> tuple[int, int]:
        return self.tau1.shape

    @property
    def mean_tau(self) -> np.ndarray:
        return self.alpha1 * self.tau1 + (1.0 - self.alpha1) * self.tau2

    def params_at(self, i: int, j: int) -> BiParams:
        return BiParams(
            float(self.tau1[i, j]), float(self.tau2[i, j]), float(self.alpha1[i, j])
        )

    def histogram_at(self, i: int, j: int) -> Histogram:
        return Histogram(self.counts[i, j], self.axis)


def generate_spatial_map(
    a: float,
    irf_spec: IrfSpec,
    axis: TimeAxis,
    rows: int,
    cols: int,
    seed: int,
    center: tuple[float, float, float] = (0.3, 2.0, 0.05),
    edge: tuple[float, float, float] = (2.0, 5.0, 0.95),
) -> SpatialMap:
    """Radial parameter gradient from map center to mid-edges.

    The normalized radius scales each axis by its half-extent, so the four
    mid-edge pixels sit exactly at r = 1 and corners clip to r = 1.  Pixels
    at equal radius share identical parameters; (tau1, tau2, alpha1) vary
    linearly in r between the center and edge triples.
    """
    if rows < 8 or cols < 8:
        raise DataError(f"map must be at least 8x8, got {rows}x{cols}")
    ci, cj = (rows - 1) / 2.0, (cols - 1) / 2.0
    ii, jj = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    r = np.sqrt(((ii - ci) / ci) ** 2 + ((jj - cj) / cj) ** 2)
    r = np.minimum(r, 1.0)
    c = np.asarray(center, dtype=float)
    e = np.asarray(edge, dtype=float)
    tau1 = c[0] + r * (e[0] - c[0])
    tau2 = c[1] + r * (e[1] - c[1])
    alpha1 = c[2] + r * (e[2] - c[2])

    irf = build_irf(irf_spec, axis)
    counts = np.empty((rows, cols, axis.n_bins), dtype=np.int64)
    for i in range(rows):
        for j in range(cols):
            params = BiParams(float(tau1[i, j]), float(tau2[i, j]), float(alpha1[i, j]))
            mu = expected_counts(a, model_curve(params, irf, axis))
            counts[i, j] = sample_histogram(mu, axis, derive_seed(seed, i, j)).counts
    return SpatialMap(tau1, tau2, alpha1, counts, axis)
