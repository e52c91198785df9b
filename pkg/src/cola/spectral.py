"""Frequency-domain analysis of weight matrices.

Each weight row is treated as a signal along the input dimension: take the
DFT per row, keep the non-negative-frequency magnitudes, and average across
rows. The frequency axis is normalized so Nyquist = 1, and energies are
partitioned into low [0, 0.2), mid [0.2, 0.6) and high [0.6, 1.0] bands.
Comparing a compressed layer's band magnitudes against the original's shows
where compression preserved or destroyed spectral content.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .compression import LinearLayer
from .errors import ShapeError, ValidationError

BAND_EDGES = (0.2, 0.6)
BAND_NAMES = ("low", "mid", "high")


def spectrum_frequencies(n_bins: int) -> np.ndarray:
    """Nyquist-normalized frequencies for an rfft magnitude array."""
    if n_bins < 2:
        raise ValueError(f"need at least 2 bins, got {n_bins}")
    return np.linspace(0.0, 1.0, n_bins)


def weight_spectrum(layer: LinearLayer) -> np.ndarray:
    """Row-averaged DFT magnitudes over the non-negative frequency half."""
    if layer.cols < 2:
        raise ShapeError(f"layer {layer.name!r} needs >= 2 columns for a spectrum")
    mags = np.abs(np.fft.rfft(layer.weights, axis=1))
    return mags.mean(axis=0)


def _band_masks(n_bins: int, freqs: np.ndarray | None) -> list[np.ndarray]:
    if freqs is None:
        freqs = spectrum_frequencies(n_bins)
    elif len(freqs) != n_bins:
        raise ShapeError(f"{len(freqs)} frequencies for {n_bins} bins")
    lo, hi = BAND_EDGES
    return [freqs < lo, (freqs >= lo) & (freqs < hi), freqs >= hi]


def band_energies(
    spectrum: np.ndarray, freqs: np.ndarray | None = None
) -> tuple[tuple[float, float, float], tuple[float, float, float]]:
    """Per-band spectral energy (sum of squared magnitudes) and fractions.

    Bins partition at normalized frequencies 0.2 and 0.6; the three band
    energies always sum to the total spectral energy. With no explicit
    frequency axis the bins are assumed uniform from 0 to Nyquist.
    """
    spectrum = np.asarray(spectrum, dtype=np.float64)
    if spectrum.ndim != 1 or spectrum.size == 0:
        raise ValidationError(f"spectrum must be a nonempty 1-D array, got shape {spectrum.shape}")
    power = spectrum**2
    energies = tuple(float(power[m].sum()) for m in _band_masks(spectrum.size, freqs))
    total = sum(energies)
    if total == 0.0:
        fractions = (1.0, 0.0, 0.0)
    else:
        fractions = tuple(e / total for e in energies)
    return energies, fractions


def compression_ratio(
    original: LinearLayer, compressed: LinearLayer
) -> tuple[float | None, float | None, float | None]:
    """Per-band ratio of compressed to original mean bin magnitude.

    1.0 in a band means that band's average spectral magnitude survived
    compression unchanged. A band where the original has zero magnitude
    reports None.
    """
    if original.weights.shape != compressed.weights.shape:
        raise ShapeError(
            f"shapes differ: {original.weights.shape} vs {compressed.weights.shape}"
        )
    spec_o = weight_spectrum(original)
    spec_c = weight_spectrum(compressed)
    ratios: list[float | None] = []
    for m in _band_masks(spec_o.size, None):
        mean_o = float(spec_o[m].mean()) if m.any() else 0.0
        mean_c = float(spec_c[m].mean()) if m.any() else 0.0
        ratios.append(None if mean_o == 0.0 else mean_c / mean_o)
    return tuple(ratios)


@dataclass(frozen=True)
class SpectrumReport:
    """Spectral summary of one layer, optionally against a compressed copy."""

    layer_name: str
    spectrum: np.ndarray
    band_energy: tuple[float, float, float]
    band_fraction: tuple[float, float, float]
    ratio: tuple[float | None, float | None, float | None] | None = None

    def __post_init__(self):
        spec = np.ascontiguousarray(self.spectrum, dtype=np.float64)
        spec.flags.writeable = False
        object.__setattr__(self, "spectrum", spec)
        if abs(sum(self.band_fraction) - 1.0) > 1e-9:
            raise ValidationError(f"band fractions sum to {sum(self.band_fraction)}")
        total = float(np.sum(spec**2))
        if total > 0 and abs(sum(self.band_energy) - total) > 1e-9 * total:
            raise ValidationError("band energies do not sum to total spectral energy")

    def to_dict(self) -> dict:
        doc = {
            "layer_name": self.layer_name,
            "spectrum": [float(v) for v in self.spectrum],
            "band_energy": dict(zip(BAND_NAMES, self.band_energy)),
            "band_fraction": dict(zip(BAND_NAMES, self.band_fraction)),
        }
        if self.ratio is not None:
            doc["ratio"] = dict(zip(BAND_NAMES, self.ratio))
        return doc


def analyze_layer(original: LinearLayer, compressed: LinearLayer | None = None) -> SpectrumReport:
    """Build the full spectral report for one layer."""
    spectrum = weight_spectrum(original)
    energy, fraction = band_energies(spectrum)
    ratio = None if compressed is None else compression_ratio(original, compressed)
    return SpectrumReport(original.name, spectrum, energy, fraction, ratio)
