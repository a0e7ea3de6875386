"""Spline-sketch accumulation, the fixed-point LUT path, and phasors."""

import math
import warnings
from fractions import Fraction

import numpy as np
import pytest

from sketchflim.decay import (
    BiParams,
    Histogram,
    IrfSpec,
    TimeAxis,
    build_irf,
    expected_counts,
    model_curve,
)
from sketchflim.errors import DataError, NumericError
from sketchflim.fisher import KnotSet, uniform_knots
from sketchflim.fit import phasor_mono_lifetime
from sketchflim.sketch import (
    FXP_ONE,
    FxpLut,
    PhasorPoint,
    SplineBasis,
    _exact_dot,
    analytic_mono_phasor,
    basis_eval,
    basis_matrix,
    build_fxp_lut,
    fxp_accumulate,
    fxp_sketch_from_timestamps,
    irf_correct_phasor,
    normalize_sketch,
    phasor_from_histogram,
    phasor_from_timestamps,
    sketch_from_histogram,
    sketch_from_timestamps,
    sketch_matrix,
)


@pytest.fixture
def basis(rng):
    b = np.linspace(0.3, 9.1, 7) + rng.uniform(-0.2, 0.2, 7)
    return SplineBasis(KnotSet(b))


class TestBasis:
    def test_matches_interp_hat_oracle(self, basis, rng):
        times = rng.uniform(-1.0, 11.0, 400)
        b = basis.knots.boundaries
        phi = basis_matrix(basis, times)
        clamped = np.clip(times, b[0], b[-1])
        for i in range(basis.m):
            expected = np.interp(clamped, b[i : i + 3], [0.0, 1.0, 0.0])
            assert np.allclose(phi[i], expected, atol=1e-12)

    def test_peaks_at_interior_boundaries(self, basis):
        b = basis.knots.boundaries
        for i in range(basis.m):
            vals = basis_eval(basis, float(b[i + 1]))
            assert vals[i] == 1.0
            assert vals.sum() == 1.0

    def test_partition_of_unity_inside_interior_span(self, basis, rng):
        b = basis.knots.boundaries
        times = rng.uniform(b[1] + 1e-9, b[-2] - 1e-9, 300)
        phi = basis_matrix(basis, times)
        assert np.allclose(phi.sum(axis=0), 1.0, atol=1e-12)

    def test_at_most_two_channels_per_photon(self, basis, rng):
        phi = basis_matrix(basis, rng.uniform(-1.0, 11.0, 500))
        assert np.all((phi > 0).sum(axis=0) <= 2)
        assert np.all(phi >= 0.0)
        assert np.all(phi.sum(axis=0) <= 1.0 + 1e-12)

    def test_clamps_outside_the_span(self, basis):
        phi = basis_matrix(basis, np.array([-50.0, 50.0]))
        assert np.all(phi == 0.0)

    def test_stream_sketch_equals_column_sums(self, basis, rng):
        times = rng.uniform(0.0, 10.0, 250)
        s = sketch_from_timestamps(basis, times)
        assert s.photon_count == 250
        assert np.allclose(s.values, basis_matrix(basis, times).sum(axis=1), rtol=1e-12)

    def test_stream_equals_matrix_path_on_bin_centers(self, axis, basis, rng):
        w = sketch_matrix(basis, axis)
        for _ in range(20):
            counts = rng.poisson(3.0, axis.n_bins)
            counts[rng.integers(axis.n_bins)] += 1  # never empty
            stream = sketch_from_timestamps(basis, np.repeat(axis.centers, counts))
            hist = sketch_from_histogram(w, Histogram(counts, axis))
            assert np.allclose(stream.values, hist.values, rtol=1e-9, atol=1e-12)
            assert stream.photon_count == hist.photon_count == counts.sum()

    def test_normalize(self, basis, rng):
        s = sketch_from_timestamps(basis, rng.uniform(1.0, 9.0, 100))
        n = normalize_sketch(s)
        assert n.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(normalize_sketch(s.values), n)
        with pytest.raises(DataError):
            normalize_sketch(np.zeros(4))

    def test_bad_inputs(self, basis, axis):
        with pytest.raises(DataError):
            sketch_from_timestamps(basis, np.array([]))
        counts = np.ones(axis.n_bins, dtype=np.int64)
        with pytest.raises(DataError):
            sketch_from_histogram(np.ones((4, 7)), Histogram(counts, axis))


class TestFxp:
    def test_lut_is_rounded_q88(self, basis):
        depth, window = 256, 10.0
        lut = build_fxp_lut(basis, depth, window)
        cells = (np.arange(depth) + 0.5) * (window / depth)
        q = np.clip(np.floor(basis_matrix(basis, cells) * FXP_ONE + 0.5), 0, 65535)
        assert lut.table.dtype == np.uint16
        assert np.array_equal(lut.table, q.astype(np.uint16))
        assert lut.table.max() <= FXP_ONE
        assert lut.m == basis.m and lut.depth == depth

    def test_nonstandard_depth_warns(self, basis):
        with pytest.warns(UserWarning):
            build_fxp_lut(basis, 48, 10.0)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            build_fxp_lut(basis, 64, 10.0)

    def test_lut_build_errors(self, basis):
        with pytest.raises(DataError):
            build_fxp_lut(basis, 0, 10.0)
        with pytest.raises(DataError):
            build_fxp_lut(basis, 64, 0.0)

    def test_accumulate_matches_manual_lookup(self, basis):
        lut = build_fxp_lut(basis, 256, 10.0)
        times = np.array([0.0, 0.2, 5.0, 9.99, -3.0, 42.0])
        cells = np.clip(
            np.floor(np.clip(times, 0.0, None) * 25.6).astype(int), 0, 255
        )
        expected = sum(lut.table[:, c].astype(np.int64) for c in cells)
        acc = fxp_accumulate(lut, times)
        assert acc.dtype == np.int64
        assert np.array_equal(acc, expected)

    def test_accumulators_add_exactly_across_chunks(self, basis, rng):
        lut = build_fxp_lut(basis, 128, 10.0)
        times = rng.uniform(0.0, 10.0, 5000)
        whole = fxp_accumulate(lut, times)
        parts = fxp_accumulate(lut, times[:1700]) + fxp_accumulate(lut, times[1700:])
        assert np.array_equal(whole, parts)

    def test_order_invariance(self, basis, rng):
        lut = build_fxp_lut(basis, 64, 10.0)
        times = rng.uniform(0.0, 10.0, 3000)
        shuffled = rng.permutation(times)
        assert np.array_equal(fxp_accumulate(lut, times), fxp_accumulate(lut, shuffled))

    def test_sketch_is_single_final_divide(self, basis, rng):
        lut = build_fxp_lut(basis, 256, 10.0)
        times = rng.uniform(0.0, 10.0, 999)
        s = fxp_sketch_from_timestamps(lut, times)
        assert np.array_equal(s.values * FXP_ONE, fxp_accumulate(lut, times))
        assert s.photon_count == 999

    def test_empty_stream_rejected(self, basis):
        lut = build_fxp_lut(basis, 64, 10.0)
        with pytest.raises(DataError):
            fxp_accumulate(lut, np.array([]))

    def test_lut_container_validation(self):
        with pytest.raises(DataError):
            FxpLut(np.zeros((2, 4)), 10.0)  # not uint16
        with pytest.raises(DataError):
            FxpLut(np.zeros(4, dtype=np.uint16), 10.0)
        with pytest.raises(DataError):
            FxpLut(np.zeros((2, 4), dtype=np.uint16), 0.0)


class TestPhasor:
    def test_histogram_equals_timestamps_bitwise(self, axis, rng):
        for _ in range(20):
            counts = rng.poisson(4.0, axis.n_bins)
            counts[rng.integers(axis.n_bins)] += 1
            hist = Histogram(counts, axis)
            ph = phasor_from_histogram(hist)
            pt = phasor_from_timestamps(np.repeat(axis.centers, counts), axis.window)
            assert ph.g == pt.g and ph.s == pt.s
            assert ph.photon_count == pt.photon_count

    def test_histogram_equals_timestamps_second_harmonic(self, axis, rng):
        counts = rng.poisson(4.0, axis.n_bins) + 1
        ph = phasor_from_histogram(Histogram(counts, axis), harmonic=2)
        pt = phasor_from_timestamps(np.repeat(axis.centers, counts), axis.window, 2)
        assert ph.g == pt.g and ph.s == pt.s

    def test_coordinates_are_builtin_floats(self, axis, rng):
        # repr() of these lands in CSV output; numpy scalars must not leak
        counts = rng.poisson(4.0, axis.n_bins) + 1
        ph = phasor_from_histogram(Histogram(counts, axis))
        assert type(ph.g) is float and type(ph.s) is float

    def test_exact_dot_is_correctly_rounded(self, rng):
        for _ in range(5):
            w = rng.uniform(-1.0, 1.0, 60) * 10.0 ** rng.integers(-6, 7, 60)
            v = rng.uniform(-1.0, 1.0, 60)
            true = sum(Fraction(a) * Fraction(b) for a, b in zip(w, v))
            assert _exact_dot(w, v) == float(true)

    def test_analytic_on_the_semicircle(self):
        for tau in (0.2, 0.5, 1.0, 2.0, 4.0, 8.0):
            p = analytic_mono_phasor(tau, 10.0)
            assert (p.g - 0.5) ** 2 + p.s**2 == pytest.approx(0.25, abs=1e-15)

    def test_analytic_matches_fine_sampling(self):
        axis = TimeAxis.from_window(1024, 10.0)
        counts = np.exp(-axis.centers / 0.5)
        p = phasor_from_histogram(Histogram(counts, axis))
        ref = analytic_mono_phasor(0.5, 10.0)
        assert p.g == pytest.approx(ref.g, abs=1e-4)
        assert p.s == pytest.approx(ref.s, abs=1e-4)

    def test_irf_correction_inverts_complex_product(self):
        decay = PhasorPoint(0.3, 0.2, 100)
        irf = PhasorPoint(0.8, -0.132, 100)
        z = complex(decay.g, decay.s) * complex(irf.g, irf.s)
        out = irf_correct_phasor(PhasorPoint(z.real, z.imag, 100), irf)
        assert out.g == pytest.approx(decay.g, abs=1e-12)
        assert out.s == pytest.approx(decay.s, abs=1e-12)
        assert out.photon_count == 100
        with pytest.raises(DataError):
            irf_correct_phasor(PhasorPoint(0.3, 0.2, 1, harmonic=2), irf)
        with pytest.raises(NumericError):
            irf_correct_phasor(decay, PhasorPoint(0.0, 0.0, 1))

    def test_corrected_mono_lifetime_recovery(self, axis, irf_spec):
        irf = build_irf(irf_spec, axis)
        irf_point = phasor_from_histogram(Histogram(irf, axis))
        for tau in (0.3, 0.5, 1.0):
            from sketchflim.decay import MonoParams

            curve = expected_counts(400.0, model_curve(MonoParams(tau), irf, axis))
            c = irf_correct_phasor(phasor_from_histogram(Histogram(curve, axis)), irf_point)
            assert abs(phasor_mono_lifetime(c, axis.window) - tau) < 0.05
            assert abs(math.hypot(c.g - 0.5, c.s) - 0.5) < 0.02

    def test_mixtures_lie_on_a_chord_inside_the_semicircle(self, axis, irf_spec):
        irf = build_irf(irf_spec, axis)
        irf_point = phasor_from_histogram(Histogram(irf, axis))
        pts = []
        for a1 in (0.2, 0.4, 0.6, 0.8):
            curve = expected_counts(1000.0, model_curve(BiParams(0.4, 2.0, a1), irf, axis))
            c = irf_correct_phasor(phasor_from_histogram(Histogram(curve, axis)), irf_point)
            pts.append((c.g, c.s))
            assert (c.g - 0.5) ** 2 + c.s**2 < 0.25
        pts = np.array(pts)
        d = pts - pts[0]
        cross = d[1, 0] * d[2:, 1] - d[1, 1] * d[2:, 0]
        assert np.all(np.abs(cross) < 1e-10)

    def test_roundtrip_through_analytic_point(self):
        for tau in (0.2, 1.0, 3.5):
            p = analytic_mono_phasor(tau, 12.5)
            assert phasor_mono_lifetime(p, 12.5) == pytest.approx(tau, rel=1e-12)

    def test_bad_inputs(self, axis):
        with pytest.raises(DataError):
            phasor_from_timestamps(np.array([]), 10.0)
        with pytest.raises(DataError):
            phasor_from_timestamps(np.array([1.0]), 10.0, harmonic=0)
        with pytest.raises(DataError):
            phasor_from_timestamps(np.array([1.0]), -1.0)
        with pytest.raises(DataError):
            phasor_from_histogram(Histogram(np.zeros(axis.n_bins), axis))
        with pytest.raises(DataError):
            analytic_mono_phasor(-1.0, 10.0)
