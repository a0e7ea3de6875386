"""Lifetime estimators over sketches and full histograms, plus CRB bounds.

All fits share one box-projected Levenberg-Marquardt loop: damped
Gauss-Newton steps, projection onto the parameter box, steps accepted only
when they strictly decrease the objective.  The mono sketch fit is a 1-D
problem and uses a coarse grid plus golden-section refinement instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .decay import (
    BiParams,
    BiRanges,
    DecayParams,
    Histogram,
    IrfSpec,
    MonoParams,
    MonoRanges,
    ParamRanges,
    TimeAxis,
    build_irf,
    curve_from_vector,
    param_vector,
)
from .errors import DataError, NumericError
from .fisher import _BOUNDS, _fd_steps, mu_gradient
from .sketch import PhasorPoint, SplineBasis, normalize_sketch, sketch_matrix

MU_FLOOR = 1e-12
GRID_POINTS = 64
GOLDEN_TOL = 1e-4
LM_STEP_TOL = 1e-6
LM_MAX_ITER = 200
MLE_NLL_TOL = 1e-8


@dataclass(frozen=True)
class FitContext:
    """Everything a fit needs: axis, IRF vector, parameter box, basis."""

    axis: TimeAxis
    irf: np.ndarray
    ranges: ParamRanges
    basis: Optional[SplineBasis] = None
    w: Optional[np.ndarray] = None

    @property
    def kind(self) -> str:
        return "mono" if isinstance(self.ranges, MonoRanges) else "bi"

    @property
    def box(self) -> tuple[np.ndarray, np.ndarray]:
        r = self.ranges
        if isinstance(r, MonoRanges):
            return np.array([r.tau_min]), np.array([r.tau_max])
        return (
            np.array([r.tau1_min, r.tau2_min, r.alpha_min]),
            np.array([r.tau1_max, r.tau2_max, r.alpha_max]),
        )


def make_context(
    axis: TimeAxis,
    irf_spec: IrfSpec,
    ranges: ParamRanges,
    basis: Optional[SplineBasis] = None,
) -> FitContext:
    """Build a FitContext, caching the IRF vector and sketch matrix."""
    irf = build_irf(irf_spec, axis)
    w = sketch_matrix(basis, axis) if basis is not None else None
    return FitContext(axis, irf, ranges, basis, w)


def _params_from_theta(kind: str, theta: np.ndarray) -> DecayParams:
    if kind == "mono":
        return MonoParams(float(theta[0]))
    t1, t2, a1 = map(float, theta)
    if t1 > t2:
        t1, t2, a1 = t2, t1, 1.0 - a1
    return BiParams(t1, t2, a1)


def _model_sketch_vec(kind: str, theta: np.ndarray, ctx: FitContext) -> np.ndarray:
    curve = curve_from_vector(kind, theta, ctx.irf, ctx.axis)
    return normalize_sketch(ctx.w @ curve)


def model_sketch(params: DecayParams, ctx: FitContext) -> np.ndarray:
    """Unit-L1 model sketch for the given decay parameters."""
    if ctx.w is None:
        raise DataError("fit context has no sketch basis")
    kind = "mono" if isinstance(params, MonoParams) else "bi"
    return _model_sketch_vec(kind, param_vector(params), ctx)


def _fd_jacobian(fn, kind: str, theta: np.ndarray) -> np.ndarray:
    """Central-difference Jacobian of a vector-valued model.

    Same stepping rule as mu_gradient: relative step with an absolute
    floor, one-sided at the edge of the model's validity region.
    """
    cols = []
    base = None
    for c in range(theta.size):
        lo, hi = _BOUNDS[kind][c]
        down, up = _fd_steps(theta[c], lo, hi)
        vp, vm = theta.copy(), theta.copy()
        if down and up:
            vp[c] += up
            vm[c] -= down
            cols.append((fn(vp) - fn(vm)) / (up + down))
        else:
            if base is None:
                base = fn(theta)
            if up:
                vp[c] += up
                cols.append((fn(vp) - base) / up)
            else:
                vm[c] -= down
                cols.append((base - fn(vm)) / down)
    return np.column_stack(cols)


def _lm_minimize(
    objective,
    grad_hess,
    theta0: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    step_tol: float = LM_STEP_TOL,
    obj_tol: Optional[float] = None,
    max_iter: int = LM_MAX_ITER,
):
    """Box-projected LM with multiplicative damping.

    Returns (theta, objective, iterations, converged, history).  Only
    strictly decreasing steps are accepted, so history is monotone.
    """
    theta = np.clip(np.asarray(theta0, dtype=float), lo, hi)
    f = float(objective(theta))
    history = [f]
    lam = 1e-3
    converged = False
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        g, h = grad_hess(theta)
        accepted = False
        step = None
        for _ in range(40):
            damp = np.diag(np.maximum(np.diag(h), 1e-12))
            try:
                delta = np.linalg.solve(h + lam * damp, -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                if lam > 1e12:
                    break
                continue
            cand = np.clip(theta + delta, lo, hi)
            fc = float(objective(cand))
            if fc < f:
                step = cand - theta
                theta, f = cand, fc
                history.append(f)
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                break
            lam *= 10.0
            if lam > 1e12:
                break
        if not accepted:
            # no descent step at machine scale: stationary for our purposes
            converged = True
            break
        if np.linalg.norm(step) < step_tol:
            converged = True
            break
        if obj_tol is not None and history[-2] - history[-1] < obj_tol:
            converged = True
            break
    return theta, f, iterations, converged, history


def _golden_section(f, a: float, b: float, tol: float) -> tuple[float, int]:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    evals = 2
    while (b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
        evals += 1
    return 0.5 * (a + b), evals


def fit_mono_sketch(s_meas, ctx: FitContext) -> "FitResult":
    """Mono lifetime from a sketch: 64-point grid scan, then golden section.

    The objective is the squared distance between unit-L1 measured and
    model sketches; refinement runs to an absolute lifetime tolerance of
    1e-4 ns inside the bracket around the best grid point.
    """
    if ctx.w is None:
        raise DataError("fit context has no sketch basis")
    if not isinstance(ctx.ranges, MonoRanges):
        raise DataError("mono fit needs mono ranges")
    target = normalize_sketch(s_meas)

    def sse(tau: float) -> float:
        model = _model_sketch_vec("mono", np.array([tau]), ctx)
        diff = model - target
        return float(diff @ diff)

    grid = np.linspace(ctx.ranges.tau_min, ctx.ranges.tau_max, GRID_POINTS)
    vals = np.array([sse(tau) for tau in grid])
    if vals.max() - vals.min() < 1e-15:
        raise NumericError("objective is flat across the lifetime range")
    i = int(np.argmin(vals))
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, GRID_POINTS - 1)]
    tau, evals = _golden_section(sse, a, b, GOLDEN_TOL)
    return FitResult(
        params=MonoParams(float(tau)),
        objective=sse(tau),
        amplitude=None,
        iterations=GRID_POINTS + evals + 1,
        converged=True,
        chi2=None,
    )


def fit_bi_sketch(s_meas, ctx: FitContext) -> "FitResult":
    """Bi-exponential fit of a unit-L1 sketch by box-projected LM.

    Starts from the box midpoint, uses central finite-difference Jacobians,
    and stops when the accepted step norm drops below 1e-6.  If the midpoint
    run exhausts its iteration budget without converging (a flat valley),
    the fit restarts from the eight quartile corners of the box and keeps
    the best result, preferring converged ones.
    """
    if ctx.w is None:
        raise DataError("fit context has no sketch basis")
    if not isinstance(ctx.ranges, BiRanges):
        raise DataError("bi fit needs bi ranges")
    target = normalize_sketch(s_meas)
    lo, hi = ctx.box

    def model(theta):
        return _model_sketch_vec("bi", theta, ctx)

    def objective(theta):
        diff = model(theta) - target
        return diff @ diff

    def grad_hess(theta):
        j = _fd_jacobian(model, "bi", theta)
        r = model(theta) - target
        return j.T @ r, j.T @ j

    starts = [0.5 * (lo + hi)]
    best = None
    total_iterations = 0
    for attempt, theta0 in enumerate(starts):
        theta, f, iterations, converged, _ = _lm_minimize(
            objective, grad_hess, theta0, lo, hi
        )
        total_iterations += iterations
        if best is None or (converged, -f) > (best[2], -best[1]):
            best = (theta, f, converged)
        if attempt == 0 and not converged:
            # restart list appended mid-loop; the for picks the corners up
            q1 = lo + 0.25 * (hi - lo)
            q3 = lo + 0.75 * (hi - lo)
            starts.extend(
                np.array([a, b, c])
                for a in (q1[0], q3[0])
                for b in (q1[1], q3[1])
                for c in (q1[2], q3[2])
            )
    theta, f, converged = best
    return FitResult(
        params=_params_from_theta("bi", theta),
        objective=float(f),
        amplitude=None,
        iterations=total_iterations,
        converged=converged,
        chi2=None,
    )


def fit_sketch(s_meas, ctx: FitContext) -> "FitResult":
    """Dispatch to the mono or bi sketch fit based on the context ranges."""
    if isinstance(ctx.ranges, MonoRanges):
        return fit_mono_sketch(s_meas, ctx)
    return fit_bi_sketch(s_meas, ctx)


def _as_counts(y) -> np.ndarray:
    counts = y.counts if isinstance(y, Histogram) else y
    counts = np.asarray(counts, dtype=float)
    if counts.ndim != 1:
        raise DataError("histogram data must be a vector")
    if counts.sum() <= 0:
        raise DataError("histogram carries no photons")
    return counts


def _chi2(y: np.ndarray, fitted: np.ndarray) -> float:
    return float(np.mean((y - fitted) ** 2 / np.maximum(y, 1.0)))


def fit_histogram_nlsf(y, ctx: FitContext) -> "FitResult":
    """Least-squares histogram fit with the amplitude profiled out.

    At every shape evaluation the optimal amplitude has the closed form
    A* = (y . g) / (g . g), so the solver only searches lifetimes (and
    alpha1 for the bi model).
    """
    y = _as_counts(y)
    if y.size != ctx.axis.n_bins:
        raise DataError("histogram length does not match axis")
    kind = ctx.kind
    lo, hi = ctx.box

    def residual(theta):
        g = curve_from_vector(kind, theta, ctx.irf, ctx.axis)
        a_star = (y @ g) / (g @ g)
        return a_star * g - y

    def objective(theta):
        r = residual(theta)
        return r @ r

    def grad_hess(theta):
        j = _fd_jacobian(residual, kind, theta)
        r = residual(theta)
        return j.T @ r, j.T @ j

    theta0 = 0.5 * (lo + hi)
    theta, f, iterations, converged, _ = _lm_minimize(
        objective, grad_hess, theta0, lo, hi
    )
    g = curve_from_vector(kind, theta, ctx.irf, ctx.axis)
    a_star = float((y @ g) / (g @ g))
    return FitResult(
        params=_params_from_theta(kind, theta),
        objective=float(f),
        amplitude=a_star,
        iterations=iterations,
        converged=converged,
        chi2=_chi2(y, a_star * g),
    )


def fit_histogram_mle(y, ctx: FitContext) -> "FitResult":
    """Poisson maximum-likelihood histogram fit.

    The amplitude is profiled exactly (A* = sum y / sum g); shape parameters
    follow the same box-projected LM loop with Fisher-scoring curvature and
    a 1e-8 tolerance on the negative log-likelihood change.
    """
    y = _as_counts(y)
    if y.size != ctx.axis.n_bins:
        raise DataError("histogram length does not match axis")
    kind = ctx.kind
    lo, hi = ctx.box
    y_total = y.sum()

    def mu_of(theta):
        g = curve_from_vector(kind, theta, ctx.irf, ctx.axis)
        return (y_total / g.sum()) * g

    def objective(theta):
        mu = np.maximum(mu_of(theta), MU_FLOOR)
        return float(np.sum(mu - y * np.log(mu)))

    def grad_hess(theta):
        j = _fd_jacobian(mu_of, kind, theta)
        mu = np.maximum(mu_of(theta), MU_FLOOR)
        grad = j.T @ (1.0 - y / mu)
        hess = (j.T / mu) @ j
        return grad, hess

    theta0 = 0.5 * (lo + hi)
    theta, f, iterations, converged, _ = _lm_minimize(
        objective, grad_hess, theta0, lo, hi, step_tol=0.0, obj_tol=MLE_NLL_TOL
    )
    g = curve_from_vector(kind, theta, ctx.irf, ctx.axis)
    a_star = float(y_total / g.sum())
    return FitResult(
        params=_params_from_theta(kind, theta),
        objective=float(f),
        amplitude=a_star,
        iterations=iterations,
        converged=converged,
        chi2=_chi2(y, a_star * g),
    )


def mean_lifetime(params: DecayParams) -> float:
    """Amplitude-weighted mean lifetime; for mono this is tau itself."""
    if isinstance(params, MonoParams):
        return params.tau
    return params.alpha1 * params.tau1 + (1.0 - params.alpha1) * params.tau2


@dataclass(frozen=True)
class FitResult:
    params: DecayParams
    objective: float
    amplitude: Optional[float]
    iterations: int
    converged: bool
    chi2: Optional[float]

    @property
    def mean_tau(self) -> float:
        return mean_lifetime(self.params)


@dataclass(frozen=True)
class CrbResult:
    """Cramer-Rao lower bounds: per-parameter and for the mean lifetime."""

    param_bounds: np.ndarray
    mean_tau_bound: float
    condition: float


def crb(params: DecayParams, a: float, ctx: FitContext, epsilon: float = 1e-3) -> CrbResult:
    """CRB standard-deviation bounds at known amplitude.

    Builds the full Fisher information matrix over the shape parameters,
    inverts it, and propagates to the mean lifetime by the delta method
    with gradient (alpha1, 1 - alpha1, tau1 - tau2).
    """
    if not (a > 0):
        raise DataError("amplitude must be positive")
    kind = "mono" if isinstance(params, MonoParams) else "bi"
    theta = param_vector(params)
    mu = a * curve_from_vector(kind, theta, ctx.irf, ctx.axis)
    grads = [mu_gradient(params, a, ctx.irf, ctx.axis, c) for c in range(theta.size)]
    weight = 1.0 / (mu + epsilon)
    p = theta.size
    info = np.empty((p, p))
    for i in range(p):
        for j in range(i, p):
            info[i, j] = info[j, i] = np.sum(grads[i] * grads[j] * weight)
    condition = float(np.linalg.cond(info))
    if not np.isfinite(condition) or condition > 1e12:
        raise NumericError(
            f"information matrix is numerically singular (cond ~ {condition:.3g})"
        )
    cov = np.linalg.inv(info)
    bounds = np.sqrt(np.diag(cov))
    if kind == "mono":
        mean_bound = float(bounds[0])
    else:
        d = np.array([params.alpha1, 1.0 - params.alpha1, params.tau1 - params.tau2])
        mean_bound = float(np.sqrt(max(d @ cov @ d, 0.0)))
    return CrbResult(bounds, mean_bound, condition)


def phasor_mono_lifetime(p: PhasorPoint, window: float) -> float:
    """Mono lifetime read off a (preferably IRF-corrected) phasor point."""
    if not (window > 0):
        raise DataError("window must be positive")
    if p.g <= 1e-9:
        raise NumericError(f"phasor g = {p.g} is outside the usable semicircle domain")
    omega = 2.0 * math.pi * p.harmonic / window
    tau = p.s / (omega * p.g)
    if tau <= 0:
        raise NumericError(f"phasor implies a non-positive lifetime ({tau:.3g} ns)")
    return tau
