"""Prior-guided attention calibration.

Logit and probability tensors are plain float64 arrays shaped
``(heads, queries, keys)``; a 2-D ``(queries, keys)`` array is treated as a
single head. The acoustic prior enters as a flattened vector ``g`` with one
weight per query position, shared by every head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from stemcal import _backend

SCHEDULES = ("constant", "linear_decay", "cosine_decay")
DEFAULT_LAMBDA = 2.5
DEFAULT_GUIDANCE = 3.5


@dataclass(frozen=True)
class TokenMask:
    bits: np.ndarray = field(compare=False)
    target_span: tuple  # inclusive (start, end)

    @property
    def indices(self):
        return np.flatnonzero(self.bits)


@dataclass
class CalibrationConfig:
    """Modulation strength, its schedule over editing steps, and the calibrated layers.

    ``layer_set=None`` means "the model's down layers".
    """

    lambda_max: float = DEFAULT_LAMBDA
    schedule: str = "constant"
    layer_set: frozenset | None = None
    guidance_scale: float = DEFAULT_GUIDANCE

    def __post_init__(self):
        if self.lambda_max < 0:
            raise ValueError(f"lambda_max must be >= 0, got {self.lambda_max}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}; expected one of {SCHEDULES}")
        if self.layer_set is not None:
            self.layer_set = frozenset(int(i) for i in self.layer_set)


def _check_finite(a, what):
    if np.isnan(a).any():
        raise ValueError(f"{what} contains NaN")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} contains infinite values")


def attention_energy(q, k) -> np.ndarray:
    """Scaled dot-product energies ``q @ k.T / sqrt(d)``.

    Works per head when given ``(heads, L, d)`` arrays.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"head dimension mismatch: {q.shape[-1]} vs {k.shape[-1]}")
    d = q.shape[-1]
    return (q @ np.swapaxes(k, -1, -2)) / math.sqrt(d)


def softmax_rows(energy, backend=None) -> np.ndarray:
    """Row softmax over the key axis with max subtraction."""
    energy = np.asarray(energy, dtype=np.float64)
    _check_finite(energy, "attention logits")
    return _backend.softmax_rows(energy, backend)


def _check_weights(g, n_queries):
    g = np.asarray(g, dtype=np.float64).reshape(-1)
    if g.shape[0] != n_queries:
        raise ValueError(f"prior has {g.shape[0]} entries but logits have {n_queries} queries")
    if g.size and (g.min() < 0.0 or g.max() > 1.0 or not np.all(np.isfinite(g))):
        raise ValueError("prior weights must lie in [0, 1]")
    return g


def source_interpolate(e_src, e_curr, g, backend=None) -> np.ndarray:
    """Blend cached source logits with current logits row by row, before softmax.

    ``out[h, i, j] = (1 - g[i]) * e_src[h, i, j] + g[i] * e_curr[h, i, j]``.
    Rows with ``g[i]`` exactly 0 or 1 copy the corresponding input verbatim.
    """
    e_src = np.asarray(e_src, dtype=np.float64)
    e_curr = np.asarray(e_curr, dtype=np.float64)
    if e_src.shape != e_curr.shape:
        raise ValueError(f"logit shape mismatch: {e_src.shape} vs {e_curr.shape}")
    g = _check_weights(g, e_src.shape[-2])
    return _backend.interpolate_rows(e_src, e_curr, g, backend)


def post_softmax_mix(e_src, e_curr, g) -> np.ndarray:
    """Probability-space alternative: ``(1 - g) * softmax(e_src) + g * softmax(e_curr)``.

    Used only for analysis; the calibrated path mixes logits instead.
    """
    g = _check_weights(g, np.shape(e_src)[-2])[:, None]
    return (1.0 - g) * softmax_rows(e_src) + g * softmax_rows(e_curr)


def build_token_mask(token_count: int, target_span) -> TokenMask:
    """Binary mask over ``token_count`` prompt tokens, ones on the inclusive span."""
    start, end = (int(v) for v in target_span)
    if token_count < 1:
        raise ValueError("token_count must be positive")
    if end < start:
        raise ValueError(f"empty token span {target_span}")
    if start < 0 or end >= token_count:
        raise ValueError(f"token span {target_span} outside [0, {token_count})")
    bits = np.zeros(token_count, dtype=np.float64)
    bits[start:end + 1] = 1.0
    return TokenMask(bits, (start, end))


def find_token_span(tokens, phrase_tokens):
    """Inclusive index span of the first contiguous occurrence of ``phrase_tokens``."""
    tokens = [t.lower() for t in tokens]
    phrase = [t.lower() for t in phrase_tokens]
    if not phrase:
        raise ValueError("empty target phrase")
    for i in range(len(tokens) - len(phrase) + 1):
        if tokens[i:i + len(phrase)] == phrase:
            return i, i + len(phrase) - 1
    raise ValueError(f"target phrase {phrase_tokens!r} not found in prompt tokens")


def acoustic_modulate(energy, g, mask: TokenMask, lam: float, backend=None) -> np.ndarray:
    """Add ``lam * outer(g, mask)`` to text cross-attention logits, identically for every head."""
    energy = np.asarray(energy, dtype=np.float64)
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    g = _check_weights(g, energy.shape[-2])
    bits = mask.bits if isinstance(mask, TokenMask) else np.asarray(mask, dtype=np.float64)
    if bits.shape[0] != energy.shape[-1]:
        raise ValueError(f"token mask has {bits.shape[0]} entries but logits have {energy.shape[-1]} keys")
    return _backend.add_outer_bias(energy, g, bits, lam, backend)


def lambda_at(config: CalibrationConfig, t: int, total: int) -> float:
    """Modulation strength at editing step ``t`` of ``total``.

    ``t = 0`` is the first (noisiest) editing step; the decay schedules go
    from ``lambda_max`` there to 0 at ``t = total - 1``.
    """
    if total < 1:
        raise ValueError("total steps must be >= 1")
    if not 0 <= t < total:
        raise ValueError(f"step {t} outside [0, {total})")
    if config.schedule == "constant" or total == 1:
        return float(config.lambda_max)
    progress = t / (total - 1)
    if config.schedule == "linear_decay":
        return config.lambda_max * (1.0 - progress)
    return config.lambda_max * (1.0 + math.cos(math.pi * progress)) / 2.0
