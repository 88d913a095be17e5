"""Naive DSP stem separation, stem ingestion and target-to-stem mapping."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import median_filter

from stemcal import _backend
from stemcal.signal import ComplexSpectrogram, Waveform, istft, read_wav, stft

STEMS = ("vocals", "bass", "drums", "others")

HPSS_MARGIN = 3.0
HPSS_KERNEL = (31, 31)  # (time frames, frequency bins)
HPSS_WINDOW = 2048
HPSS_HOP = 512
BASS_CUTOFF = 300.0
BASS_ORDER = 4
OTHERS_WEIGHT = 0.8


@dataclass
class StemSet:
    stems: dict
    origin: str  # "naive_dsp" or "ingested"

    def __post_init__(self):
        if set(self.stems) != set(STEMS):
            raise ValueError(f"stem set must have exactly {STEMS}, got {sorted(self.stems)}")
        rates = {w.sample_rate for w in self.stems.values()}
        lengths = {len(w) for w in self.stems.values()}
        if len(rates) != 1 or len(lengths) != 1:
            raise ValueError("all stems must share sample rate and length")
        if self.origin not in ("naive_dsp", "ingested"):
            raise ValueError(f"unknown stem origin {self.origin!r}")

    def __getitem__(self, name) -> Waveform:
        return self.stems[name]

    @property
    def sample_rate(self) -> int:
        return self.stems["vocals"].sample_rate


@dataclass(frozen=True)
class StemTarget:
    category: str
    raw_label: str


def hpss_masks(magnitude, margin=HPSS_MARGIN, kernel=HPSS_KERNEL):
    """Hard harmonic/percussive masks from median-filtered magnitudes.

    ``magnitude`` is time-major ``(T, F)``. The harmonic enhancement is a
    median along time, the percussive one a median along frequency.
    """
    if margin < 1:
        raise ValueError(f"margin must be >= 1, got {margin}")
    n_time, n_freq = magnitude.shape
    if n_time < kernel[0] or n_freq < kernel[1]:
        raise ValueError(
            f"spectrogram {magnitude.shape} too small for median filters {kernel}; input too short"
        )
    harmonic = median_filter(magnitude, size=(kernel[0], 1), mode="reflect")
    percussive = median_filter(magnitude, size=(1, kernel[1]), mode="reflect")
    return harmonic >= margin * percussive, percussive >= margin * harmonic


def hpss(s: ComplexSpectrogram, margin=HPSS_MARGIN, kernel=HPSS_KERNEL):
    """Split a spectrogram into harmonic and percussive waveforms."""
    mask_h, mask_p = hpss_masks(s.magnitude, margin, kernel)
    harmonic = istft(ComplexSpectrogram(s.bins * mask_h, s.frame_hop, s.window_size, s.sample_rate, s.length))
    percussive = istft(ComplexSpectrogram(s.bins * mask_p, s.frame_hop, s.window_size, s.sample_rate, s.length))
    return harmonic, percussive


def butterworth_sos(cutoff, sample_rate, order=BASS_ORDER):
    """Digital Butterworth low-pass as second-order sections.

    Analog prototype poles are prewarped and mapped through the bilinear
    transform; every section has unit DC gain. Rows are
    ``[b0, b1, b2, 1, a1, a2]``.
    """
    if not 0 < cutoff < sample_rate / 2:
        raise ValueError(f"cutoff {cutoff} Hz outside (0, {sample_rate / 2})")
    if order < 1:
        raise ValueError("order must be >= 1")
    fs2 = 2.0 * sample_rate
    warped = fs2 * math.tan(math.pi * cutoff / sample_rate)
    sections = []
    for k in range(order // 2):
        pole = warped * np.exp(1j * math.pi * (2 * k + order + 1) / (2 * order))
        zp = (fs2 + pole) / (fs2 - pole)
        a1, a2 = -2.0 * zp.real, abs(zp) ** 2
        gain = (1.0 + a1 + a2) / 4.0
        sections.append([gain, 2.0 * gain, gain, 1.0, a1, a2])
    if order % 2:
        zp = (fs2 - warped) / (fs2 + warped)
        gain = (1.0 - zp) / 2.0
        sections.append([gain, gain, 0.0, 1.0, -zp, 0.0])
    return np.array(sections)


def butterworth_lowpass(w: Waveform, cutoff=BASS_CUTOFF, order=BASS_ORDER) -> Waveform:
    """Causal single-pass Butterworth low-pass filter."""
    sos = butterworth_sos(cutoff, w.sample_rate, order)
    return Waveform(_backend.sosfilt(sos, w.samples), w.sample_rate)


def naive_separate(mix: Waveform, margin=HPSS_MARGIN, cutoff=BASS_CUTOFF, order=BASS_ORDER) -> StemSet:
    """Heuristic four-stem split with deliberate vocals/others leakage.

    drums = percussive HPSS output; bass = low-passed harmonic part; the
    harmonic residual goes to vocals unweighted and to others scaled by 0.8.
    """
    if mix.channels != 1:
        raise ValueError("naive_separate expects mono input")
    spec = stft(mix, HPSS_WINDOW, HPSS_HOP)
    harmonic, percussive = hpss(spec, margin)
    bass = butterworth_lowpass(harmonic, cutoff, order)
    residual = harmonic.samples - bass.samples
    sr = mix.sample_rate
    return StemSet(
        {
            "vocals": Waveform(residual, sr),
            "bass": bass,
            "drums": percussive,
            "others": Waveform(OTHERS_WEIGHT * residual, sr),
        },
        origin="naive_dsp",
    )


def _fit_length(x, n):
    if len(x) >= n:
        return x[:n]
    return np.concatenate([x, np.zeros(n - len(x), dtype=x.dtype)])


def ingest_stems(directory, mix: Waveform) -> StemSet:
    """Load ``vocals/bass/drums/others.wav`` from ``directory``.

    Stems are downmixed, resampled to the mix rate and truncated or
    zero-padded to the mix length.
    """
    directory = Path(directory)
    stems = {}
    for name in STEMS:
        path = directory / f"{name}.wav"
        if not path.is_file():
            raise FileNotFoundError(f"missing stem file {path}")
        w = read_wav(path, sample_rate=mix.sample_rate, mono=True)
        stems[name] = Waveform(_fit_length(np.asarray(w.samples), len(mix)), mix.sample_rate)
    return StemSet(stems, origin="ingested")


# Phrases are matched before single words so "bass clarinet" is not bass.
_PHRASES = {
    "bass clarinet": "others",
    "bass flute": "others",
    "bass drum": "drums",
    "steel drum": "others",
    "steel drums": "others",
    "drum machine": "drums",
    "hi hat": "drums",
    "a cappella": "vocals",
    "upright bass": "bass",
    "double bass": "bass",
    "bass guitar": "bass",
    "sub bass": "bass",
}
_WORDS = {
    "vocals": {
        "voice", "voices", "vocal", "vocals", "vocalist", "singer", "singers", "singing",
        "choir", "acapella", "rap", "rapper", "rapping", "humming", "falsetto", "crooner",
    },
    "bass": {"bass", "basses", "bassline", "subbass", "contrabass", "808"},
    "drums": {
        "drum", "drums", "drumkit", "percussion", "percussive", "kick", "snare", "hihat",
        "cymbal", "cymbals", "tom", "toms", "cajon", "conga", "congas", "bongo", "bongos",
        "tabla", "tambourine", "clap", "claps", "shaker", "beatbox", "timpani",
    },
}


def map_target(raw_label: str) -> StemTarget:
    """Map a free-text instrument label onto a separator stem.

    Anything outside the vocals/bass/drums lexicon routes to ``others``,
    whose whole stem then serves as the coarse target region.
    """
    if not raw_label or not raw_label.strip():
        raise ValueError("target label must be non-empty")
    text = " ".join(re.findall(r"[a-z0-9]+", raw_label.lower()))
    if text in STEMS:
        return StemTarget(text, raw_label)
    hits, covered = [], set()
    for phrase, category in _PHRASES.items():
        for m in re.finditer(rf"\b{phrase}\b", text):
            hits.append((m.start(), category))
            covered.update(range(m.start(), m.end()))
    for m in re.finditer(r"[a-z0-9]+", text):
        if m.start() in covered:
            continue
        for category, words in _WORDS.items():
            if m.group() in words:
                hits.append((m.start(), category))
    category = min(hits)[1] if hits else "others"
    return StemTarget(category, raw_label)


def aggregate(stems: StemSet, target: StemTarget):
    """Return ``(target waveform, sum of the other three stems)``."""
    sr = stems.sample_rate
    tgt = np.asarray(stems[target.category].samples, dtype=np.float64)
    con = np.zeros_like(tgt)
    for name in STEMS:
        if name != target.category:
            con = con + np.asarray(stems[name].samples, dtype=np.float64)
    return Waveform(tgt, sr), Waveform(con, sr)
