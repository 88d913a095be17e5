"""Attention entropy, melodic consistency (top-1 CQT correlation) and balance composites."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from stemcal import _backend
from stemcal.signal import (
    CQT_BINS,
    CQT_BINS_PER_OCTAVE,
    CQT_FMIN,
    Waveform,
    cqt,
    resample,
    to_mono,
)

ENTROPY_EPS = 1e-12
CQT_PCC_SR = 16000


def attention_entropy(maps, epsilon=ENTROPY_EPS, backend=None) -> float:
    """Mean row entropy over queries, heads and layers.

    ``maps`` is one probability tensor per layer, each ``(heads, queries, keys)``
    or ``(queries, keys)``. Each layer's mean is taken first, then the layers
    are averaged with equal weight.
    """
    if isinstance(maps, np.ndarray):
        maps = [maps]
    if not maps:
        raise ValueError("no attention maps given")
    per_layer = []
    for probs in maps:
        probs = np.asarray(probs, dtype=np.float64)
        if probs.min() < 0 or not np.allclose(probs.sum(axis=-1), 1.0, atol=1e-6, rtol=0):
            raise ValueError("attention rows must be non-negative and sum to 1")
        per_layer.append(_backend.row_entropy(probs, epsilon, backend).mean())
    return float(np.mean(per_layer))


def top1_cqt(w: Waveform, sample_rate=CQT_PCC_SR) -> np.ndarray:
    """CQT magnitudes with everything but each frame's strongest bin zeroed.

    Ties go to the lowest bin index.
    """
    w = resample(to_mono(w), sample_rate)
    mags = cqt(w, CQT_BINS, CQT_BINS_PER_OCTAVE, CQT_FMIN)
    top = np.zeros_like(mags)
    rows = np.arange(mags.shape[0])
    best = mags.argmax(axis=1)
    top[rows, best] = mags[rows, best]
    return top


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.sqrt(a @ a), np.sqrt(b @ b)
    if na == 0 or nb == 0:
        raise ValueError("zero-variance sequence: correlation undefined")
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


def cqt1_pcc(a: Waveform, b: Waveform, sample_rate=CQT_PCC_SR) -> float:
    """Pearson correlation between the top-1 CQT maps of two signals.

    Both signals are resampled to ``sample_rate`` and truncated to the
    shorter one before analysis.
    """
    a = resample(to_mono(a), sample_rate)
    b = resample(to_mono(b), sample_rate)
    n = min(len(a), len(b))
    a = Waveform(a.samples[:n], sample_rate)
    b = Waveform(b.samples[:n], sample_rate)
    return pearson(top1_cqt(a, sample_rate), top1_cqt(b, sample_rate))


def minmax_normalize(values) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        raise ValueError("need at least two values to normalize")
    lo, hi = values.min(), values.max()
    if hi == lo:
        raise ValueError("cannot min-max normalize a constant vector")
    return (values - lo) / (hi - lo)


def composite(alignment: float, preservation: float) -> float:
    """Harmonic mean of two normalized scores; 0 when both are 0."""
    for v in (alignment, preservation):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"composite inputs must lie in [0, 1], got {v}")
    total = alignment + preservation
    return 0.0 if total == 0 else 2.0 * alignment * preservation / total


@dataclass
class MetricRow:
    method: str
    clap: float
    lpaps: float
    cqt1_pcc: float
    asb: float = float("nan")
    amb: float = float("nan")


def composite_table(rows):
    """Fill in ASB/AMB for a cohort of methods.

    CLAP and CQT1-PCC are min-max normalized across the cohort; LPAPS is
    normalized and inverted (``1 - norm``) since lower is better.
    """
    rows = list(rows)
    clap = minmax_normalize([r.clap for r in rows])
    structure = 1.0 - minmax_normalize([r.lpaps for r in rows])
    melody = minmax_normalize([r.cqt1_pcc for r in rows])
    return [
        MetricRow(r.method, r.clap, r.lpaps, r.cqt1_pcc, composite(c, s), composite(c, m))
        for r, c, s, m in zip(rows, clap, structure, melody)
    ]


def read_metric_table(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"method", "clap", "lpaps", "cqt1_pcc"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"metric table missing columns: {sorted(missing)}")
        return [
            MetricRow(r["method"], float(r["clap"]), float(r["lpaps"]), float(r["cqt1_pcc"]))
            for r in reader
        ]


_COLUMNS = ("method", "clap", "cqt1_pcc", "lpaps", "asb", "amb")


def format_table(rows) -> str:
    lines = [f"{'Method':<16}{'CLAP':>8}{'CQT1-PCC':>10}{'LPAPS':>8}{'ASB':>8}{'AMB':>8}"]
    for r in rows:
        lines.append(
            f"{r.method:<16}{r.clap:>8.3f}{r.cqt1_pcc:>10.3f}{r.lpaps:>8.3f}{r.asb:>8.3f}{r.amb:>8.3f}"
        )
    lines.append("(ASB/AMB normalized relative to this cohort)")
    return "\n".join(lines)


def table_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_COLUMNS)
    for r in rows:
        writer.writerow([r.method] + [f"{getattr(r, c):.6f}" for c in _COLUMNS[1:]])
    return buf.getvalue()
