"""Frequency-domain toolkit: FFT wrappers, EEG band masks, DE/PSD features.

Everything here operates on torch tensors so the same code serves both the
offline feature dump and the differentiable training path. All functions are
pure; masks and spectra can be precomputed once per window length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

# Canonical EEG rhythm bands, low/high edges in Hz. Intervals are half-open
# [low, high) except gamma, which is closed at its upper edge.
BAND_ORDER = ("delta", "theta", "alpha", "beta", "gamma")
DEFAULT_BAND_EDGES = {
    "delta": (0.5, 4.0),
    "theta": (4.0, 8.0),
    "alpha": (8.0, 13.0),
    "beta": (13.0, 30.0),
    "gamma": (30.0, 50.0),
}

# Floor applied to per-channel variance before the entropy log.
VARIANCE_FLOOR = 1e-8


@dataclass
class Spectrum:
    """One-sided DFT coefficients of a real signal, plus its frequency axis."""

    coeffs: torch.Tensor          # (..., C, F) complex
    freq_axis: torch.Tensor       # (F,) Hz, strictly increasing from 0
    source_len: int               # L, number of time samples transformed

    @property
    def num_bins(self) -> int:
        return self.coeffs.shape[-1]


@dataclass
class BandMaskSet:
    """Binary selection masks over the frequency axis, one per band."""

    masks: dict                   # band name -> (F,) float tensor of 0/1
    edges: dict                   # band name -> (low_hz, high_hz)
    freq_axis: torch.Tensor

    def __iter__(self):
        return iter(self.masks.items())


@dataclass
class BandFeatures:
    """Per-band differential entropy and power features for one batch."""

    band: str
    de: torch.Tensor              # (..., C)
    psd: torch.Tensor             # (..., C)
    banded_spectrum: torch.Tensor = field(repr=False)  # (..., C, F) complex


def forward_fft(signal: torch.Tensor, rate_hz: float) -> Spectrum:
    """One-sided DFT along the last (time) axis.

    Accepts (C, L) or (B, C, L); the coefficient tensor keeps the leading
    shape. Raises on non-finite input.
    """
    if signal.shape[-1] < 2:
        raise ValueError("signal must have at least 2 time samples")
    if rate_hz <= 0:
        raise ValueError("sampling rate must be positive")
    if not torch.isfinite(signal).all():
        raise ValueError("signal contains NaN/Inf")
    length = signal.shape[-1]
    coeffs = torch.fft.rfft(signal, dim=-1)
    freq_axis = torch.fft.rfftfreq(length, d=1.0 / rate_hz, dtype=torch.float64)
    return Spectrum(coeffs=coeffs, freq_axis=freq_axis, source_len=length)


def inverse_fft(spectrum: Spectrum) -> torch.Tensor:
    """Real time-domain reconstruction of length ``source_len``."""
    expected = spectrum.source_len // 2 + 1
    if spectrum.num_bins != expected:
        raise ValueError(
            f"spectrum has {spectrum.num_bins} bins, expected {expected} "
            f"for source_len={spectrum.source_len}"
        )
    return torch.fft.irfft(spectrum.coeffs, n=spectrum.source_len, dim=-1)


def band_masks(freq_axis: torch.Tensor, band_edges: dict | None = None) -> BandMaskSet:
    """Build 0/1 selection masks for each band over ``freq_axis``.

    Custom edges must be non-overlapping under the half-open convention;
    the last band (by upper edge) is closed at the top so its edge bin is
    kept.
    """
    edges = dict(DEFAULT_BAND_EDGES if band_edges is None else band_edges)
    ordered = sorted(edges.items(), key=lambda kv: kv[1])
    for (_, (lo_a, hi_a)), (_, (lo_b, _)) in zip(ordered, ordered[1:]):
        if lo_a >= hi_a or lo_b < hi_a:
            raise ValueError("band edges overlap or are inverted")
    top_band = ordered[-1][0]
    freqs = freq_axis.to(torch.float64)
    masks = {}
    for name, (lo, hi) in edges.items():
        if name == top_band:
            inside = (freqs >= lo) & (freqs <= hi)
        else:
            inside = (freqs >= lo) & (freqs < hi)
        masks[name] = inside.to(torch.float64)
    return BandMaskSet(masks=masks, edges=edges, freq_axis=freq_axis)


def apply_band_mask(spectrum: Spectrum, mask: torch.Tensor) -> torch.Tensor:
    """Zero all out-of-band coefficients; returns the masked coefficients."""
    return spectrum.coeffs * mask.to(spectrum.coeffs.real.dtype)


def differential_entropy(banded_signal: torch.Tensor,
                         variance_floor: float = VARIANCE_FLOOR) -> torch.Tensor:
    """Gaussian differential entropy of each channel, in nats.

    ``banded_signal`` is a time-domain signal (..., C, L); the variance is
    taken over time per channel and floored so silent windows stay finite.
    """
    var = banded_signal.var(dim=-1, unbiased=False)
    var = torch.clamp(var, min=variance_floor)
    return 0.5 * torch.log(2.0 * math.pi * math.e * var)


def power_spectral_density(banded_spectrum: torch.Tensor) -> torch.Tensor:
    """Mean squared coefficient magnitude per channel, (..., C).

    The divisor is the full bin count F; out-of-band bins are zero in a
    masked spectrum so the sum only ever collects in-band energy.
    """
    num_bins = banded_spectrum.shape[-1]
    return banded_spectrum.abs().pow(2).sum(dim=-1) / num_bins


def band_features(signal: torch.Tensor, rate_hz: float,
                  band_edges: dict | None = None,
                  variance_floor: float = VARIANCE_FLOOR) -> list[BandFeatures]:
    """DE and PSD for every band of ``signal``, in canonical band order."""
    spectrum = forward_fft(signal, rate_hz)
    masks = band_masks(spectrum.freq_axis, band_edges)
    out = []
    for name in sorted(masks.edges, key=lambda n: masks.edges[n]):
        coeffs = apply_band_mask(spectrum, masks.masks[name])
        banded = torch.fft.irfft(coeffs, n=spectrum.source_len, dim=-1)
        out.append(BandFeatures(
            band=name,
            de=differential_entropy(banded, variance_floor),
            psd=power_spectral_density(coeffs),
            banded_spectrum=coeffs,
        ))
    return out


def spectrum_energy(spectrum: Spectrum) -> torch.Tensor:
    """Time-domain energy sum(x^2) recovered from one-sided coefficients."""
    length = spectrum.source_len
    mag2 = spectrum.coeffs.abs().pow(2)
    weights = torch.full((spectrum.num_bins,), 2.0,
                         dtype=mag2.dtype, device=mag2.device)
    weights[0] = 1.0
    if length % 2 == 0:
        weights[-1] = 1.0
    return (mag2 * weights).sum(dim=-1) / length
