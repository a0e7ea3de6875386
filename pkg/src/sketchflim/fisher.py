"""Per-bin Fisher information density and information-balanced knot placement.

The density scores how much each time bin contributes to estimating the decay
parameters, per detected photon: squared parameter sensitivity of the
arrival-time distribution divided by the (floored) distribution itself.
Interior spline knots are then placed at equal quantiles of the normalized
density, so every knot interval carries the same share of information.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decay import (
    BiParams,
    BiRanges,
    DecayParams,
    MonoParams,
    MonoRanges,
    ParamRanges,
    TimeAxis,
    IrfSpec,
    build_irf,
    curve_from_vector,
    param_vector,
)
from .errors import DataError, NumericError

REL_STEP = 1e-4
ABS_STEP_FLOOR = 1e-6

# Floor on the relative-to-uniform arrival distribution: 2.5% of a flat
# histogram's level.  Keeps empty-tail bins from dominating the score while
# leaving genuine tail information visible.
DEFAULT_EPSILON = 0.025


@dataclass(frozen=True)
class FisherDensity:
    """Non-negative per-bin information scores plus how they were aggregated."""

    values: np.ndarray
    aggregation: str
    n_grid: int
    epsilon: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise DataError("density must be a non-empty vector")
        if np.any(~np.isfinite(v)) or np.any(v < 0):
            raise DataError("density values must be finite and non-negative")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class KnotSet:
    """Strictly increasing spline boundaries xi_0 < ... < xi_{M+1} (ns)."""

    boundaries: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        if b.ndim != 1 or b.size < 4:
            raise DataError("need at least 4 boundaries (M >= 2)")
        if np.any(np.diff(b) <= 0):
            raise DataError("boundaries must be strictly increasing")
        object.__setattr__(self, "boundaries", b)

    @property
    def m(self) -> int:
        """Number of interior knots / basis functions."""
        return self.boundaries.size - 2


def _fd_steps(value: float, lo: float, hi: float) -> tuple[float, float]:
    """Step sizes (down, up) for differencing at `value` inside (lo, hi).

    Central differencing with a relative step; falls back to one-sided when
    the opposite probe would leave the valid open interval.
    """
    h = max(REL_STEP * abs(value), ABS_STEP_FLOOR)
    down = h if value - h > lo else 0.0
    up = h if value + h < hi else 0.0
    if down == 0.0 and up == 0.0:
        raise NumericError(f"no room to difference at {value} in ({lo}, {hi})")
    return down, up


_BOUNDS = {
    "mono": [(0.0, np.inf)],
    "bi": [(0.0, np.inf), (0.0, np.inf), (0.0, 1.0)],
}


def mu_gradient(
    params: DecayParams,
    a: float,
    irf: np.ndarray,
    axis: TimeAxis,
    component: int,
) -> np.ndarray:
    """Finite-difference gradient of the expected histogram wrt one parameter.

    Component indices: mono 0 = tau; bi 0 = tau1, 1 = tau2, 2 = alpha1.
    """
    kind = "mono" if isinstance(params, MonoParams) else "bi"
    theta = param_vector(params)
    if not 0 <= component < theta.size:
        raise DataError(f"component {component} out of range for {kind} model")
    lo, hi = _BOUNDS[kind][component]
    down, up = _fd_steps(theta[component], lo, hi)

    def mu_at(delta: float) -> np.ndarray:
        v = theta.copy()
        v[component] += delta
        return a * curve_from_vector(kind, v, irf, axis)

    return (mu_at(up) - mu_at(-down)) / (up + down)


def _profile(kind: str, theta: np.ndarray, irf: np.ndarray, axis: TimeAxis) -> np.ndarray:
    """Arrival-time distribution scaled so a flat histogram sits at 1.

    Working per detected photon removes the amplitude from the score, which
    keeps knot placement invariant to A and to the number of bins.
    """
    g = curve_from_vector(kind, theta, irf, axis)
    total = np.sum(g)
    if total <= 0:
        raise NumericError("decay profile has non-positive mass")
    return axis.n_bins * g / total


def _density_from_samples(
    kind: str,
    thetas: np.ndarray,
    irf: np.ndarray,
    axis: TimeAxis,
    epsilon: float,
    aggregation: str,
) -> np.ndarray:
    if aggregation not in ("average", "max"):
        raise DataError(f"unknown aggregation: {aggregation!r}")
    acc = np.zeros(axis.n_bins)
    for theta in thetas:
        q = _profile(kind, theta, irf, axis)
        score = np.zeros(axis.n_bins)
        for comp in range(theta.size):
            lo, hi = _BOUNDS[kind][comp]
            down, up = _fd_steps(theta[comp], lo, hi)
            t_up, t_dn = theta.copy(), theta.copy()
            t_up[comp] += up
            t_dn[comp] -= down
            d = (_profile(kind, t_up, irf, axis) - _profile(kind, t_dn, irf, axis)) / (up + down)
            score += d * d
        score /= q + epsilon
        if aggregation == "average":
            acc += score
        else:
            np.maximum(acc, score, out=acc)
    if aggregation == "average":
        acc /= len(thetas)
    return acc


def fisher_density_mono(
    ranges: MonoRanges,
    a: float,
    irf_spec: IrfSpec,
    axis: TimeAxis,
    n_grid: int = 500,
    epsilon: float = DEFAULT_EPSILON,
    aggregation: str = "average",
) -> FisherDensity:
    """Squared lifetime sensitivity of the photon arrival-time distribution
    over (distribution + epsilon), averaged (or maxed) across a uniform
    deterministic grid of n_grid lifetimes in the range.

    The amplitude argument is accepted for interface symmetry with the
    experiment configs; the score is computed per photon, so it cancels.
    """
    if n_grid < 1:
        raise DataError("n_grid must be at least 1")
    if not (epsilon > 0):
        raise DataError("epsilon must be positive")
    del a
    irf = build_irf(irf_spec, axis)
    taus = np.linspace(ranges.tau_min, ranges.tau_max, n_grid)
    thetas = taus.reshape(-1, 1)
    values = _density_from_samples("mono", thetas, irf, axis, epsilon, aggregation)
    return FisherDensity(values, aggregation, n_grid, epsilon)


def fisher_density_bi(
    ranges: BiRanges,
    a: float,
    irf_spec: IrfSpec,
    axis: TimeAxis,
    n_grid: int = 500,
    epsilon: float = DEFAULT_EPSILON,
    aggregation: str = "average",
    seed: int = 0,
) -> FisherDensity:
    """Summed squared sensitivity of the arrival-time distribution to all
    three bi-exponential parameters over (distribution + epsilon), aggregated
    over n_grid parameter triples drawn uniformly from the ranges with a
    fixed seed.  Per photon, so the amplitude cancels (see mono)."""
    if n_grid < 1:
        raise DataError("n_grid must be at least 1")
    if not (epsilon > 0):
        raise DataError("epsilon must be positive")
    del a
    irf = build_irf(irf_spec, axis)
    rng = np.random.default_rng(seed)
    thetas = np.column_stack(
        [
            rng.uniform(ranges.tau1_min, ranges.tau1_max, n_grid),
            rng.uniform(ranges.tau2_min, ranges.tau2_max, n_grid),
            rng.uniform(ranges.alpha_min, ranges.alpha_max, n_grid),
        ]
    )
    values = _density_from_samples("bi", thetas, irf, axis, epsilon, aggregation)
    return FisherDensity(values, aggregation, n_grid, epsilon)


def fisher_cdf(density: FisherDensity, axis: TimeAxis) -> np.ndarray:
    """Normalized cumulative information mass evaluated at bin centers."""
    if density.values.size != axis.n_bins:
        raise DataError("density length does not match axis")
    mass = np.cumsum(density.values * axis.bin_width)
    if mass[-1] <= 0:
        raise DataError("density is identically zero")
    # dividing by the cumsum tail (not a re-summation) pins the final value to 1
    return mass / mass[-1]


def allocate_knots(cdf: np.ndarray, axis: TimeAxis, m: int) -> KnotSet:
    """Place M interior knots at equal quantiles of the information CDF.

    Endpoints are pinned to the first and last bin centers.  Quantiles are
    inverted by piecewise-linear interpolation between bin centers; exact
    collisions (CDF plateaus) are repaired by nudging boundaries one bin
    width apart, pushing right then pulling back from the pinned right end.
    """
    cdf = np.asarray(cdf, dtype=float)
    if cdf.shape != (axis.n_bins,):
        raise DataError("CDF length does not match axis")
    if np.any(np.diff(cdf) < 0) or cdf[0] < 0:
        raise DataError("CDF must be non-decreasing and non-negative")
    if m < 2:
        raise DataError(f"need at least 2 interior knots, got {m}")
    t = axis.centers
    dt = axis.bin_width
    levels = np.arange(1, m + 1) / (m + 1)
    idx = np.searchsorted(cdf, levels, side="left")
    interior = np.empty(m)
    for n, (q, k) in enumerate(zip(levels, idx)):
        if k == 0:
            interior[n] = t[0]
        else:
            frac = (q - cdf[k - 1]) / (cdf[k] - cdf[k - 1])
            interior[n] = t[k - 1] + frac * dt
    b = np.concatenate([[t[0]], interior, [t[-1]]])
    for i in range(1, m + 1):
        if b[i] <= b[i - 1]:
            b[i] = b[i - 1] + dt
    for i in range(m, 0, -1):
        if b[i] >= b[i + 1]:
            b[i] = b[i + 1] - dt
    if np.any(np.diff(b) <= 0):
        raise NumericError(
            f"cannot fit {m} interior knots into {axis.n_bins} bins after repair"
        )
    return KnotSet(b)


def uniform_knots(axis: TimeAxis, m: int) -> KnotSet:
    """Evenly spaced boundaries from the first to the last bin center."""
    if m < 2:
        raise DataError(f"need at least 2 interior knots, got {m}")
    return KnotSet(np.linspace(axis.centers[0], axis.centers[-1], m + 2))
