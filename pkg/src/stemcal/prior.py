"""Acoustic priors: ideal ratio masks, the min-max magnitude baseline, and resizing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from stemcal.signal import ComplexSpectrogram, MelFilterbank

KINDS = ("irm", "irm_mel", "norm")


@dataclass
class AcousticPrior:
    """A time-major soft mask with entries in [0, 1]."""

    values: np.ndarray
    kind: str
    source_shape: tuple

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.kind not in KINDS:
            raise ValueError(f"unknown prior kind {self.kind!r}; expected one of {KINDS}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("prior contains non-finite values")
        if self.values.size and (self.values.min() < 0.0 or self.values.max() > 1.0):
            raise ValueError("prior values must lie in [0, 1]")
        self.source_shape = tuple(self.source_shape)

    @property
    def shape(self):
        return self.values.shape


def _magnitude(s):
    if isinstance(s, ComplexSpectrogram):
        return s.magnitude
    return np.abs(np.asarray(s))


def _ratio_mask(target_energy, other_energy):
    # 0/0 bins are treated as non-target territory
    total = target_energy + other_energy
    out = np.zeros_like(total, dtype=np.float64)
    np.divide(target_energy, total, out=out, where=total > 0)
    return np.sqrt(np.clip(out, 0.0, 1.0))


def irm(tgt, con) -> AcousticPrior:
    """Ideal ratio mask ``sqrt(|tgt|^2 / (|tgt|^2 + |con|^2))`` per bin."""
    mag_t, mag_c = _magnitude(tgt), _magnitude(con)
    if mag_t.shape != mag_c.shape:
        raise ValueError(f"shape mismatch: target {mag_t.shape} vs non-target {mag_c.shape}")
    return AcousticPrior(_ratio_mask(mag_t**2, mag_c**2), "irm", mag_t.shape)


def irm_mel(tgt, con, fb: MelFilterbank) -> AcousticPrior:
    """Ratio mask computed after pooling *power* spectra through the mel filterbank."""
    mag_t, mag_c = _magnitude(tgt), _magnitude(con)
    if mag_t.shape != mag_c.shape:
        raise ValueError(f"shape mismatch: target {mag_t.shape} vs non-target {mag_c.shape}")
    if mag_t.shape[1] != fb.weights.shape[1]:
        raise ValueError(
            f"filterbank expects {fb.weights.shape[1]} frequency bins, got {mag_t.shape[1]}"
        )
    pooled_t = (mag_t**2) @ fb.weights.T
    pooled_c = (mag_c**2) @ fb.weights.T
    return AcousticPrior(_ratio_mask(pooled_t, pooled_c), "irm_mel", mag_t.shape)


def g_norm(tgt) -> AcousticPrior:
    """Min-max normalized target magnitude; a constant input maps to zeros."""
    mag = _magnitude(tgt)
    if mag.size == 0:
        raise ValueError("empty spectrogram")
    lo, hi = mag.min(), mag.max()
    if hi == lo:
        values = np.zeros_like(mag, dtype=np.float64)
    else:
        values = np.clip((mag - lo) / (hi - lo), 0.0, 1.0)
    return AcousticPrior(values, "norm", mag.shape)


def _pooling_matrix(n_in, n_out):
    """Row ``i`` averages input cells over ``[i, i+1) * n_in / n_out`` by overlap length."""
    scale = n_in / n_out
    edges = np.arange(n_out + 1) * scale
    lo = edges[:-1, None]
    hi = edges[1:, None]
    cells = np.arange(n_in)[None, :]
    overlap = np.clip(np.minimum(hi, cells + 1) - np.maximum(lo, cells), 0.0, None)
    return overlap / overlap.sum(axis=1, keepdims=True)


def resize_array(values, target_shape):
    values = np.asarray(values, dtype=np.float64)
    rows, cols = target_shape
    if rows <= 0 or cols <= 0:
        raise ValueError(f"target shape must be positive, got {target_shape}")
    if values.shape == tuple(target_shape):
        return values.copy()
    pooled = _pooling_matrix(values.shape[0], rows) @ values @ _pooling_matrix(values.shape[1], cols).T
    return pooled


def resize(g: AcousticPrior, target_shape) -> AcousticPrior:
    """Area-average ``g`` onto a ``(rows, cols)`` grid."""
    values = np.clip(resize_array(g.values, target_shape), 0.0, 1.0)
    return AcousticPrior(values, g.kind, g.source_shape)


def flatten(g) -> np.ndarray:
    values = g.values if isinstance(g, AcousticPrior) else np.asarray(g)
    if values.ndim != 2:
        raise ValueError("flatten expects a 2-D prior")
    return values.reshape(-1).copy()
