"""Waveform I/O and time-frequency transforms.

Spectrograms are stored time-major: ``bins[t, f]`` for frame ``t`` and
frequency bin ``f``. All transforms operate on mono float64 samples.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile

#: default working sample rate; ``POLY_WORKING_SR`` overrides it
DEFAULT_SR = 16000
PRIOR_WINDOW = 1024
PRIOR_HOP = 160
PRIOR_MEL_BINS = 64
LOG_EPS = 1e-5

CQT_BINS = 128
CQT_BINS_PER_OCTAVE = 24
CQT_FMIN = 32.70319566257483  # C1
CQT_HOP = 512


def working_sample_rate() -> int:
    value = os.environ.get("POLY_WORKING_SR")
    if value is None:
        return DEFAULT_SR
    sr = int(value)
    if sr <= 0:
        raise ValueError(f"POLY_WORKING_SR must be positive, got {value!r}")
    return sr


@dataclass
class Waveform:
    """Audio samples with their sample rate.

    ``samples`` is 1-D for mono or ``(n, channels)`` for multichannel audio.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.ndim not in (1, 2) or self.samples.shape[0] == 0:
            raise ValueError("waveform must be non-empty with shape (n,) or (n, channels)")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    @property
    def channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass
class ComplexSpectrogram:
    bins: np.ndarray
    frame_hop: int
    window_size: int
    sample_rate: int
    length: int | None = None  # original signal length, used by istft

    def __post_init__(self):
        self.bins = np.asarray(self.bins)
        if self.bins.ndim != 2 or 0 in self.bins.shape:
            raise ValueError(f"spectrogram bins must be a non-empty T x F matrix, got {self.bins.shape}")
        if self.bins.shape[1] != self.window_size // 2 + 1:
            raise ValueError(
                f"bin count {self.bins.shape[1]} inconsistent with window_size {self.window_size}"
            )

    @property
    def shape(self):
        return self.bins.shape

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.bins)

    @property
    def power(self) -> np.ndarray:
        return np.abs(self.bins) ** 2


@dataclass
class MelFilterbank:
    weights: np.ndarray  # (mel_bins, n_freqs)
    f_min: float
    f_max: float
    centers: np.ndarray = field(repr=False, default=None)

    @property
    def mel_bins(self) -> int:
        return self.weights.shape[0]


@dataclass
class MelSpectrogram:
    values: np.ndarray  # (T, mel_bins)
    log_scaled: bool
    epsilon: float

    @property
    def mel_bins(self) -> int:
        return self.values.shape[1]


def to_mono(w: Waveform) -> Waveform:
    """Downmix by channel average."""
    if w.channels == 1:
        return Waveform(w.samples.reshape(-1).astype(np.float64), w.sample_rate)
    return Waveform(w.samples.astype(np.float64).mean(axis=1), w.sample_rate)


def resample(w: Waveform, sample_rate: int) -> Waveform:
    """Linear-interpolation resampler. Lossy; no anti-aliasing filter."""
    if sample_rate == w.sample_rate:
        return w
    n_out = max(1, int(round(len(w) * sample_rate / w.sample_rate)))
    t_out = np.arange(n_out) / sample_rate
    t_in = np.arange(len(w)) / w.sample_rate
    data = w.samples.astype(np.float64)
    if data.ndim == 1:
        out = np.interp(t_out, t_in, data)
    else:
        out = np.stack([np.interp(t_out, t_in, data[:, c]) for c in range(data.shape[1])], axis=1)
    return Waveform(out, sample_rate)


def read_wav(path, sample_rate: int | None = None, mono: bool = False) -> Waveform:
    """Read a PCM16 or float32 WAV file into float samples in [-1, 1].

    float32 files are returned bit-exact (as float32). PCM16 is scaled by
    1/32768. If ``sample_rate`` is given the audio is resampled to it.
    """
    sr, data = wavfile.read(path)
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        data = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported WAV sample format {data.dtype}")
    w = Waveform(data, int(sr))
    if mono:
        w = to_mono(w)
    if sample_rate is not None:
        w = resample(w, sample_rate)
    return w


def write_wav(path, w: Waveform, fmt: str = "float32") -> None:
    """Write ``w`` as IEEE float32 (default, lossless for float32 input) or PCM16."""
    if fmt == "float32":
        data = w.samples.astype(np.float32)
    elif fmt == "pcm16":
        data = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    wavfile.write(path, w.sample_rate, data)


def hann(n: int) -> np.ndarray:
    """Periodic Hann window (COLA at hop n/4 and n/2)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def n_frames(length: int, hop: int) -> int:
    return 1 + math.ceil(length / hop)


def _frame(x, window_size, hop, count):
    shape = (count, window_size)
    strides = (x.strides[0] * hop, x.strides[0])
    return np.lib.stride_tricks.as_strided(x, shape=shape, strides=strides, writeable=False)


def stft(w: Waveform, window_size: int = PRIOR_WINDOW, hop: int = PRIOR_HOP) -> ComplexSpectrogram:
    """Centered short-time Fourier transform with a Hann window.

    The signal is reflect-padded by ``window_size // 2`` on both sides and
    zero-padded at the end so that ``1 + ceil(len / hop)`` frames fit.
    """
    if not (window_size >= hop > 0):
        raise ValueError(f"need window_size >= hop > 0, got window_size={window_size}, hop={hop}")
    if w.channels != 1:
        raise ValueError("stft expects mono input; downmix with to_mono first")
    x = np.asarray(w.samples, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise ValueError("waveform contains non-finite samples")
    pad = window_size // 2
    count = n_frames(len(x), hop)
    mode = "reflect" if len(x) > 1 else "edge"
    padded = np.pad(x, pad, mode=mode)
    needed = (count - 1) * hop + window_size
    if len(padded) < needed:
        padded = np.concatenate([padded, np.zeros(needed - len(padded))])
    frames = _frame(padded, window_size, hop, count) * hann(window_size)
    bins = np.fft.rfft(frames, axis=1)
    return ComplexSpectrogram(bins, hop, window_size, w.sample_rate, length=len(x))


def istft(s: ComplexSpectrogram, length: int | None = None) -> Waveform:
    """Weighted overlap-add inverse of :func:`stft`."""
    window_size, hop = s.window_size, s.frame_hop
    if s.bins.shape[1] != window_size // 2 + 1:
        raise ValueError("spectrogram metadata inconsistent with bin count")
    length = length if length is not None else s.length
    count = s.bins.shape[0]
    if length is None:
        length = (count - 1) * hop
    win = hann(window_size)
    frames = np.fft.irfft(s.bins, n=window_size, axis=1) * win
    total = (count - 1) * hop + window_size
    out = np.zeros(total)
    norm = np.zeros(total)
    for t in range(count):
        out[t * hop:t * hop + window_size] += frames[t]
        norm[t * hop:t * hop + window_size] += win ** 2
    nonzero = norm > 1e-10
    out[nonzero] /= norm[nonzero]
    pad = window_size // 2
    out = out[pad:pad + length]
    if len(out) < length:
        out = np.concatenate([out, np.zeros(length - len(out))])
    return Waveform(out, s.sample_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    sample_rate: int = DEFAULT_SR,
    window_size: int = PRIOR_WINDOW,
    mel_bins: int = PRIOR_MEL_BINS,
    f_min: float = 0.0,
    f_max: float | None = None,
) -> MelFilterbank:
    """HTK-scale triangular filters with unit peak (no area normalization)."""
    if f_max is None:
        f_max = sample_rate / 2
    if not (0 <= f_min < f_max <= sample_rate / 2):
        raise ValueError(f"degenerate frequency range [{f_min}, {f_max}] at sr={sample_rate}")
    if mel_bins < 2:
        raise ValueError("mel_bins must be at least 2")
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), mel_bins + 2))
    freqs = np.arange(window_size // 2 + 1) * sample_rate / window_size
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(weights.max(axis=1) == 0)
    if len(empty):
        raise ValueError(
            f"mel filters {empty.tolist()} cover no FFT bin; use fewer mel_bins or a longer window"
        )
    return MelFilterbank(weights, float(f_min), float(f_max), centers=edges[1:-1])


def log_mel(s: ComplexSpectrogram, fb: MelFilterbank, epsilon: float = LOG_EPS) -> MelSpectrogram:
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if fb.weights.shape[1] != s.bins.shape[1]:
        raise ValueError(
            f"filterbank expects {fb.weights.shape[1]} bins, spectrogram has {s.bins.shape[1]}"
        )
    return MelSpectrogram(np.log(s.magnitude @ fb.weights.T + epsilon), True, epsilon)


def cqt_frequencies(n_bins=CQT_BINS, bins_per_octave=CQT_BINS_PER_OCTAVE, f_min=CQT_FMIN):
    return f_min * 2.0 ** (np.arange(n_bins) / bins_per_octave)


def cqt_kernels(sample_rate, n_bins=CQT_BINS, bins_per_octave=CQT_BINS_PER_OCTAVE, f_min=CQT_FMIN):
    """Dense constant-Q kernel matrix, each kernel centred in a common support.

    Returns ``(kernels, support)`` where ``kernels`` is ``(n_bins, support)``.
    Kernel ``k`` is a Hann-windowed complex exponential at ``f_k`` of length
    ``ceil(Q * sr / f_k)``, scaled by 1 / length.
    """
    freqs = cqt_frequencies(n_bins, bins_per_octave, f_min)
    if freqs[-1] * 2.0 ** (1.0 / bins_per_octave) > sample_rate / 2:
        raise ValueError(
            f"CQT range up to {freqs[-1]:.1f} Hz exceeds Nyquist at sr={sample_rate}"
        )
    q = 1.0 / (2.0 ** (1.0 / bins_per_octave) - 1.0)
    lengths = np.ceil(q * sample_rate / freqs).astype(int)
    support = int(lengths.max())
    kernels = np.zeros((n_bins, support), dtype=np.complex128)
    for k, (f, n) in enumerate(zip(freqs, lengths)):
        start = (support - n) // 2
        t = np.arange(n)
        kernels[k, start:start + n] = hann(n) * np.exp(2j * np.pi * f * t / sample_rate) / n
    return kernels, support


def cqt(
    w: Waveform,
    n_bins: int = CQT_BINS,
    bins_per_octave: int = CQT_BINS_PER_OCTAVE,
    f_min: float = CQT_FMIN,
    hop: int = CQT_HOP,
) -> np.ndarray:
    """Constant-Q magnitudes, shape ``(frames, n_bins)``.

    Frames are centred at multiples of ``hop`` with zero padding at the
    edges; ``1 + len // hop`` frames are produced.
    """
    kernels, support = cqt_kernels(w.sample_rate, n_bins, bins_per_octave, f_min)
    x = np.asarray(to_mono(w).samples, dtype=np.float64)
    half = support // 2
    padded = np.concatenate([np.zeros(half), x, np.zeros(support)])
    count = 1 + len(x) // hop
    frames = _frame(padded, support, hop, count)
    basis = kernels.conj().T
    out = np.empty((count, n_bins))
    for start in range(0, count, 128):
        out[start:start + 128] = np.abs(frames[start:start + 128] @ basis)
    return out
