"""Forward model: IRF, convolution, Poisson sampling, dataset generators."""

import numpy as np
import pytest

from sketchflim import (
    BiParams,
    BiRanges,
    DataError,
    Histogram,
    IrfSpec,
    MonoParams,
    TimeAxis,
    build_irf,
    derive_seed,
    expected_counts,
    generate_spatial_map,
    generate_trial_set,
    histogram_to_timestamps,
    model_curve,
    sample_histogram,
)
from sketchflim.decay import amplitude_for_total, sample_params


def delta_irf(axis, peak_bin):
    irf = np.zeros(axis.n_bins)
    irf[peak_bin] = 1.0
    return irf


class TestTimeAxis:
    def test_centers_are_half_offset(self):
        ax = TimeAxis.from_window(10, 10.0)
        assert np.allclose(ax.centers, [0.5, 1.5, 2.5, 3.5, 4.5, 5.5, 6.5, 7.5, 8.5, 9.5])

    def test_window_roundtrip(self):
        ax = TimeAxis.from_window(256, 10.0)
        assert ax.window == pytest.approx(10.0)
        assert ax.bin_width == pytest.approx(10.0 / 256)

    def test_rejects_tiny_axis(self):
        with pytest.raises(DataError):
            TimeAxis.from_window(4, 10.0)
        with pytest.raises(DataError):
            TimeAxis(16, -1.0)


class TestIrf:
    def test_unit_sum_and_peak_position(self, axis, irf_spec):
        irf = build_irf(irf_spec, axis)
        assert irf.sum() == pytest.approx(1.0, abs=1e-12)
        peak_t = axis.centers[np.argmax(irf)]
        assert abs(peak_t - 1.0) <= axis.bin_width

    def test_sigma_from_fwhm(self):
        spec = IrfSpec(fwhm=1.0, peak_time=2.0)
        # half maximum at peak +- fwhm/2 by definition of a Gaussian
        assert np.exp(-0.5 * (0.5 / spec.sigma) ** 2) == pytest.approx(0.5)

    def test_symmetry_about_peak(self, axis):
        # peak pinned to an exact bin center so mirror bins pair up exactly
        k = 128
        irf = build_irf(IrfSpec(fwhm=0.4, peak_time=float(axis.centers[k])), axis)
        assert np.argmax(irf) == k
        assert np.allclose(irf[k - 10 : k], irf[k + 1 : k + 11][::-1], rtol=1e-9)

    def test_narrow_irf_degrades_to_spike(self, axis):
        irf = build_irf(IrfSpec(fwhm=1e-9, peak_time=1.0), axis)
        assert irf.max() == pytest.approx(1.0)
        assert np.count_nonzero(irf) == 1

    def test_peak_outside_window_rejected(self, axis):
        with pytest.raises(DataError):
            build_irf(IrfSpec(fwhm=0.1, peak_time=11.0), axis)


class TestModelCurve:
    def test_delta_irf_mono_is_shifted_exponential(self, axis):
        k0 = 25
        curve = model_curve(MonoParams(2.0), delta_irf(axis, k0), axis)
        t = axis.centers
        expect = np.exp(-(t[k0:] - t[k0]) / 2.0)
        assert np.allclose(curve[k0:], expect, rtol=1e-12)
        assert np.all(curve[:k0] < 1e-10)

    def test_peak_is_exactly_one(self, axis, irf_spec):
        irf = build_irf(irf_spec, axis)
        for params in (MonoParams(0.5), BiParams(0.4, 3.0, 0.3)):
            assert model_curve(params, irf, axis).max() == 1.0

    def test_rise_follows_irf_delay(self, axis, irf_spec):
        irf = build_irf(irf_spec, axis)
        curve = model_curve(MonoParams(1.5), irf, axis)
        peak_t = axis.centers[np.argmax(curve)]
        assert 1.0 <= peak_t <= 1.3  # peak sits just after the IRF center
        assert curve[0] < 0.01

    def test_bi_is_convex_mix_before_normalization(self, axis):
        # with a delta IRF the bi tail is alpha-weighted sum of the mono tails;
        # the exponential basis starts half a bin into the window
        k0 = 25
        irf = delta_irf(axis, k0)
        t = axis.centers
        curve = model_curve(BiParams(0.5, 4.0, 0.7), irf, axis)
        u = t[k0:] - t[k0] + axis.bin_width / 2.0
        raw = 0.7 * np.exp(-u / 0.5) + 0.3 * np.exp(-u / 4.0)
        assert np.allclose(curve[k0:], raw / raw.max(), rtol=1e-12)
        assert np.all(curve[:k0] == 0.0)

    def test_bad_irf_length(self, axis):
        with pytest.raises(DataError):
            model_curve(MonoParams(1.0), np.ones(100), axis)


class TestParamValidation:
    def test_bi_requires_ordered_lifetimes(self):
        with pytest.raises(DataError):
            BiParams(3.0, 1.0, 0.5)

    def test_alpha_bounds(self):
        with pytest.raises(DataError):
            BiParams(1.0, 4.0, 1.2)

    def test_mono_positive(self):
        with pytest.raises(DataError):
            MonoParams(0.0)

    def test_ranges_validation(self):
        with pytest.raises(DataError):
            BiRanges(0.2, 2.0, 2.0, 8.0, 0.9, 0.1)


class TestSampling:
    def test_expected_counts_scales_peak(self, axis, irf_spec):
        irf = build_irf(irf_spec, axis)
        mu = expected_counts(500.0, model_curve(MonoParams(2.0), irf, axis))
        assert mu.max() == pytest.approx(500.0)

    def test_amplitude_for_total(self, axis, irf_spec):
        irf = build_irf(irf_spec, axis)
        curve = model_curve(BiParams(1.0, 4.0, 0.5), irf, axis)
        a = amplitude_for_total(20000.0, curve)
        assert np.sum(a * curve) == pytest.approx(20000.0)

    def test_poisson_moments(self, axis, irf_spec):
        irf = build_irf(irf_spec, axis)
        mu = expected_counts(800.0, model_curve(MonoParams(2.0), irf, axis))
        totals = [sample_histogram(mu, axis, seed).total for seed in range(300)]
        expect = mu.sum()
        # total is Poisson(expect): the 300-trial mean sits within 5 sigma
        assert abs(np.mean(totals) - expect) < 5 * np.sqrt(expect / 300)

    def test_same_seed_same_histogram(self, axis, irf_spec):
        irf = build_irf(irf_spec, axis)
        mu = expected_counts(100.0, model_curve(MonoParams(1.0), irf, axis))
        h1 = sample_histogram(mu, axis, 42)
        h2 = sample_histogram(mu, axis, 42)
        assert np.array_equal(h1.counts, h2.counts)

    def test_rejects_negative_expectation(self, axis):
        with pytest.raises(DataError):
            sample_histogram(-np.ones(axis.n_bins), axis, 0)


class TestTimestamps:
    def test_bin_center_expansion_rebins_exactly(self, axis, rng):
        counts = rng.poisson(3.0, axis.n_bins).astype(np.int64)
        hist = Histogram(counts, axis)
        times = histogram_to_timestamps(hist, "bin_center")
        assert times.size == counts.sum()
        edges = np.arange(axis.n_bins + 1) * axis.bin_width
        rebinned, _ = np.histogram(times, bins=edges)
        assert np.array_equal(rebinned, counts)

    def test_jitter_stays_within_bins(self, axis, rng):
        counts = rng.poisson(3.0, axis.n_bins).astype(np.int64)
        hist = Histogram(counts, axis)
        times = histogram_to_timestamps(hist, "uniform_jitter", seed=9)
        base = histogram_to_timestamps(hist, "bin_center")
        assert np.all(np.abs(times - base) <= axis.bin_width / 2 + 1e-12)

    def test_jitter_needs_seed(self, axis):
        hist = Histogram(np.ones(axis.n_bins, dtype=np.int64), axis)
        with pytest.raises(DataError):
            histogram_to_timestamps(hist, "uniform_jitter")

    def test_unknown_mode(self, axis):
        hist = Histogram(np.ones(axis.n_bins, dtype=np.int64), axis)
        with pytest.raises(DataError):
            histogram_to_timestamps(hist, "poisson_disk")


class TestGenerators:
    def test_trial_params_inside_ranges(self, axis, irf_spec, bi_ranges):
        trials = generate_trial_set(bi_ranges, 200.0, irf_spec, axis, 50, seed=3)
        assert len(trials) == 50
        for params, hist in trials:
            assert bi_ranges.tau1_min <= params.tau1 <= bi_ranges.tau1_max
            assert bi_ranges.tau2_min <= params.tau2 <= bi_ranges.tau2_max
            assert bi_ranges.alpha_min <= params.alpha1 <= bi_ranges.alpha_max
            assert hist.total > 0

    def test_trials_reproducible_and_seed_sensitive(self, axis, irf_spec, bi_ranges):
        a = generate_trial_set(bi_ranges, 200.0, irf_spec, axis, 5, seed=3)
        b = generate_trial_set(bi_ranges, 200.0, irf_spec, axis, 5, seed=3)
        c = generate_trial_set(bi_ranges, 200.0, irf_spec, axis, 5, seed=4)
        assert all(np.array_equal(x[1].counts, y[1].counts) for x, y in zip(a, b))
        assert any(not np.array_equal(x[1].counts, y[1].counts) for x, y in zip(a, c))

    def test_trial_prefix_stable_under_count(self, axis, irf_spec, mono_ranges):
        # child seeds per trial index: first trials identical for any n_trials
        short = generate_trial_set(mono_ranges, 100.0, irf_spec, axis, 3, seed=8)
        long = generate_trial_set(mono_ranges, 100.0, irf_spec, axis, 10, seed=8)
        for (pa, ha), (pb, hb) in zip(short, long):
            assert pa == pb
            assert np.array_equal(ha.counts, hb.counts)

    def test_total_photon_budget(self, axis, irf_spec, bi_ranges):
        trials = generate_trial_set(
            bi_ranges, 1.0, irf_spec, axis, 40, seed=5, total_photons=20000.0
        )
        totals = np.array([h.total for _, h in trials])
        # each trial is Poisson(20000); 40 of them pin the mean tightly
        assert abs(totals.mean() - 20000.0) < 5 * np.sqrt(20000.0 / 40)

    def test_spatial_map_endpoints_and_determinism(self, axis, irf_spec):
        m1 = generate_spatial_map(200.0, irf_spec, axis, 16, 16, seed=2)
        m2 = generate_spatial_map(200.0, irf_spec, axis, 16, 16, seed=2)
        assert np.array_equal(m1.counts, m2.counts)
        ci, cj = 7.5, 7.5  # the exact center falls between pixels on 16x16
        r_center = np.sqrt(((0 - ci) / ci) ** 2 + ((0 - cj) / cj) ** 2)
        assert r_center >= 1.0  # corner pixel clips to the edge triple
        corner = m1.params_at(0, 0)
        assert (corner.tau1, corner.tau2, corner.alpha1) == pytest.approx((2.0, 5.0, 0.95))
        mid = m1.params_at(8, 8)
        assert mid.tau1 < 0.5 and mid.alpha1 < 0.2  # near-center pixel
        assert m1.mean_tau.shape == (16, 16)

    def test_spatial_map_radial_symmetry(self, axis, irf_spec):
        m = generate_spatial_map(150.0, irf_spec, axis, 17, 17, seed=1)
        # equal radius -> identical parameter triple (mirror pixels)
        assert m.tau1[0, 8] == pytest.approx(m.tau1[16, 8])
        assert m.tau2[8, 0] == pytest.approx(m.tau2[8, 16])


class TestSeeds:
    def test_derive_seed_stable(self):
        assert derive_seed(7, 1, 2) == derive_seed(7, 1, 2)

    def test_derive_seed_distinguishes_indices(self):
        seen = {derive_seed(7, i, j) for i in range(20) for j in range(3)}
        assert len(seen) == 60

    def test_sample_params_respects_kind(self, mono_ranges, bi_ranges, rng):
        assert isinstance(sample_params(mono_ranges, rng), MonoParams)
        assert isinstance(sample_params(bi_ranges, rng), BiParams)
