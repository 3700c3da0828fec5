import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperemo.spectral import (
    BAND_ORDER,
    DEFAULT_BAND_EDGES,
    Spectrum,
    apply_band_mask,
    band_features,
    band_masks,
    differential_entropy,
    forward_fft,
    inverse_fft,
    power_spectral_density,
    spectrum_energy,
)


def _random_signal(rng, channels=3, length=64):
    return torch.tensor(rng.standard_normal((channels, length)))


class TestForwardInverse:
    def test_round_trip(self, rng):
        x = _random_signal(rng)
        spec = forward_fft(x, 128.0)
        back = inverse_fft(spec)
        assert (back - x).abs().max() < 1e-5 * x.abs().max()

    def test_constant_signal_is_pure_dc(self):
        x = torch.full((2, 32), 3.5, dtype=torch.float64)
        spec = forward_fft(x, 64.0)
        mags = spec.coeffs.abs()
        assert torch.argmax(mags[0]).item() == 0
        assert mags[0, 1:].max() < 1e-9 * mags[0, 0]

    def test_bin_aligned_sinusoid_peaks_at_its_bin(self):
        rate, length = 128.0, 128
        t = torch.arange(length, dtype=torch.float64) / rate
        x = torch.sin(2 * math.pi * 10.0 * t).unsqueeze(0)
        spec = forward_fft(x, rate)
        peak = torch.argmax(spec.coeffs.abs()[0]).item()
        assert spec.freq_axis[peak].item() == pytest.approx(10.0)

    def test_zero_spectrum_gives_zero_signal(self):
        spec = Spectrum(coeffs=torch.zeros(2, 17, dtype=torch.complex128),
                        freq_axis=torch.fft.rfftfreq(32, d=1 / 64.0), source_len=32)
        assert inverse_fft(spec).abs().max() == 0

    def test_parseval(self, rng):
        x = _random_signal(rng, 2, 50)
        spec = forward_fft(x, 100.0)
        direct = (x ** 2).sum(dim=-1)
        via_coeffs = spectrum_energy(spec)
        assert (direct - via_coeffs).abs().max() < 1e-4 * direct.max()

    def test_freq_axis_invariants(self):
        spec = forward_fft(torch.randn(1, 40, dtype=torch.float64), 200.0)
        axis = spec.freq_axis
        assert axis[0] == 0
        assert axis[-1].item() == pytest.approx(100.0)
        assert (axis.diff() > 0).all()
        assert spec.num_bins == 40 // 2 + 1

    def test_nan_input_rejected(self):
        bad = torch.ones(1, 16)
        bad[0, 3] = float("nan")
        with pytest.raises(ValueError):
            forward_fft(bad, 16.0)

    def test_inconsistent_bin_count_rejected(self):
        spec = forward_fft(torch.randn(1, 32, dtype=torch.float64), 64.0)
        spec.source_len = 30
        with pytest.raises(ValueError):
            inverse_fft(spec)


class TestBandMasks:
    def test_alpha_bin(self):
        axis = torch.fft.rfftfreq(128, d=1 / 128.0)
        masks = band_masks(axis)
        bin_10hz = 10
        assert axis[bin_10hz] == 10.0
        for band in BAND_ORDER:
            expected = 1.0 if band == "alpha" else 0.0
            assert masks.masks[band][bin_10hz].item() == expected

    def test_boundary_bin_goes_to_upper_band(self):
        # 4 Hz sits on the delta/theta edge; half-open intervals put it in theta
        axis = torch.fft.rfftfreq(128, d=1 / 128.0)
        masks = band_masks(axis)
        assert masks.masks["theta"][4].item() == 1.0
        assert masks.masks["delta"][4].item() == 0.0

    def test_out_of_range_bin_in_no_band(self):
        axis = torch.fft.rfftfreq(256, d=1 / 256.0)  # bins up to 128 Hz
        masks = band_masks(axis)
        bin_60hz = 60
        assert all(masks.masks[b][bin_60hz].item() == 0.0 for b in BAND_ORDER)

    def test_gamma_closed_at_top(self):
        axis = torch.fft.rfftfreq(100, d=1 / 100.0)  # exact 50 Hz bin
        masks = band_masks(axis)
        assert masks.masks["gamma"][50].item() == 1.0

    def test_overlapping_custom_edges_rejected(self):
        with pytest.raises(ValueError):
            band_masks(torch.fft.rfftfreq(64, d=1 / 64.0),
                       {"a": (1.0, 10.0), "b": (8.0, 20.0)})

    @given(rate=st.sampled_from([100.0, 128.0, 250.0, 500.0]),
           length=st.integers(min_value=64, max_value=512))
    @settings(max_examples=40, deadline=None)
    def test_partition_property(self, rate, length):
        axis = torch.fft.rfftfreq(length, d=1 / rate)
        masks = band_masks(axis)
        stacked = torch.stack([masks.masks[b] for b in BAND_ORDER])
        coverage = stacked.sum(dim=0)
        assert (coverage <= 1).all()
        in_range = (axis > 0.5) & (axis <= 50.0)
        assert (coverage[in_range] == 1).all()
        assert (coverage[~in_range & (axis != 0.5)] == 0).all()


class TestDifferentialEntropy:
    def test_unit_variance(self):
        # population variance exactly 1
        x = torch.tensor([[-1.0, 1.0] * 16], dtype=torch.float64)
        de = differential_entropy(x)
        assert de.item() == pytest.approx(0.5 * math.log(2 * math.pi * math.e), abs=1e-6)

    def test_zero_entropy_variance(self):
        scale = 1.0 / math.sqrt(2 * math.pi * math.e)
        x = scale * torch.tensor([[-1.0, 1.0] * 16], dtype=torch.float64)
        assert abs(differential_entropy(x).item()) < 1e-9

    def test_silent_window_hits_floor(self):
        x = torch.zeros(1, 32, dtype=torch.float64)
        expected = 0.5 * math.log(2 * math.pi * math.e * 1e-8)
        assert differential_entropy(x).item() == pytest.approx(expected, abs=1e-12)

    @given(st.floats(min_value=0.01, max_value=50.0),
           st.floats(min_value=1.05, max_value=4.0))
    @settings(max_examples=30, deadline=None)
    def test_monotone_in_variance(self, sigma, factor):
        base = torch.tensor([[-1.0, 1.0] * 8], dtype=torch.float64)
        low = differential_entropy(sigma * base)
        high = differential_entropy(sigma * factor * base)
        assert high.item() > low.item()


class TestPowerSpectralDensity:
    def test_zero_spectrum(self):
        assert power_spectral_density(torch.zeros(2, 9, dtype=torch.complex128)).abs().max() == 0

    def test_single_unit_bin(self):
        coeffs = torch.zeros(1, 16, dtype=torch.complex128)
        coeffs[0, 5] = 1.0
        assert power_spectral_density(coeffs).item() == pytest.approx(1.0 / 16)

    @given(st.floats(min_value=0.1, max_value=10.0))
    @settings(max_examples=25, deadline=None)
    def test_quadratic_scaling(self, k):
        rng = np.random.default_rng(7)
        x = torch.tensor(rng.standard_normal((2, 64)))
        spec = forward_fft(x, 64.0)
        scaled = forward_fft(k * x, 64.0)
        ratio = power_spectral_density(scaled.coeffs) / power_spectral_density(spec.coeffs)
        assert torch.allclose(ratio, torch.full_like(ratio, k ** 2), rtol=1e-6)


class TestBandFeatures:
    def test_canonical_order_and_shapes(self, rng):
        feats = band_features(_random_signal(rng, 4, 128), 128.0)
        assert [f.band for f in feats] == list(BAND_ORDER)
        for f in feats:
            assert f.de.shape == (4,)
            assert f.psd.shape == (4,)
            assert (f.psd >= 0).all()
            assert torch.isfinite(f.de).all()

    def test_masked_energy_stays_in_band(self, rng):
        x = _random_signal(rng, 1, 128)
        spec = forward_fft(x, 128.0)
        masks = band_masks(spec.freq_axis)
        banded = apply_band_mask(spec, masks.masks["beta"])
        outside = banded[0][masks.masks["beta"] == 0]
        assert outside.abs().max() == 0

    def test_edge_list_respected(self, rng):
        custom = dict(DEFAULT_BAND_EDGES)
        custom["gamma"] = (30.0, 45.0)
        feats = band_features(_random_signal(rng, 2, 128), 128.0, band_edges=custom)
        assert [f.band for f in feats] == list(BAND_ORDER)
