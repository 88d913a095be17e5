"""Synthetic dual-path inversion/editing harness.

A small, seeded stack of attention layers stands in for a latent diffusion
U-Net. Each layer runs three attention blocks on a 2-D latent grid:

``sa``   self-attention over grid positions
``text`` cross-attention to prompt token embeddings
``loa``  cross-attention to a fixed acoustic-style embedding sequence

Inversion noises a latent with seeded per-step noise and caches the raw
``sa``/``loa`` logits at every step and layer. Editing walks back from the
noisiest latent, calibrating the attention of the selected layers against
that cache: ``sa``/``loa`` logits are interpolated toward the cached ones
where the prior is low, and ``text`` logits receive the prior-times-mask
bias. The noise predictor is the fixed seeded noise plus a linear readout of
the attention-dependent hidden state, so every difference between paths is
caused by attention.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from stemcal import calibration as cal
from stemcal.container import atomic_write_bytes, read_tensor, write_tensor
from stemcal.metrics import ENTROPY_EPS
from stemcal import _backend
from stemcal.prior import AcousticPrior, flatten, resize, resize_array
from stemcal.signal import MelSpectrogram

BLOCKS = ("sa", "text", "loa")
CACHED_BLOCKS = ("sa", "loa")
VARIANTS = ("source", "current", "calibrated", "post")


@dataclass
class LayerSpec:
    grid: tuple
    down: bool


def _rms_norm(h):
    return h / np.sqrt(np.mean(h * h, axis=-1, keepdims=True) + 1e-6)


def _resize_tokens(h, src_grid, dst_grid):
    if tuple(src_grid) == tuple(dst_grid):
        return h
    grid = h.reshape(src_grid[0], src_grid[1], -1)
    out = np.stack(
        [resize_array(grid[:, :, c], dst_grid) for c in range(grid.shape[2])], axis=-1
    )
    return out.reshape(dst_grid[0] * dst_grid[1], -1)


class ToyModel:
    """Seeded stand-in for the diffusion backbone.

    The first half of the layers (rounded up) are labelled down layers.
    """

    def __init__(
        self,
        seed=0,
        grids=((16, 8), (8, 4), (8, 4), (16, 8)),
        heads=4,
        head_dim=16,
        text_len=8,
        loa_len=8,
        latent_channels=4,
        target_span=(2, 4),
        blocks=BLOCKS,
        logit_gain=3.0,
        text_gain=0.3,
        readout_scale=0.1,
        min_alpha_bar=0.05,
    ):
        unknown = set(blocks) - set(BLOCKS)
        if unknown:
            raise ValueError(f"unknown attention blocks {sorted(unknown)}")
        self.seed = int(seed)
        n_down = (len(grids) + 1) // 2
        self.layers = [LayerSpec(tuple(g), i < n_down) for i, g in enumerate(grids)]
        self.heads = heads
        self.head_dim = head_dim
        self.dim = heads * head_dim
        self.text_len = text_len
        self.loa_len = loa_len
        self.channels = latent_channels
        self.blocks = tuple(b for b in BLOCKS if b in blocks)
        self.target_span = tuple(target_span)
        self.text_gain = text_gain
        self.readout_scale = readout_scale
        self.min_alpha_bar = min_alpha_bar
        self._init_kwargs = dict(
            seed=self.seed, grids=[list(g) for g in grids], heads=heads, head_dim=head_dim,
            text_len=text_len, loa_len=loa_len, latent_channels=latent_channels,
            target_span=list(target_span), blocks=list(self.blocks), logit_gain=logit_gain,
            text_gain=text_gain, readout_scale=readout_scale, min_alpha_bar=min_alpha_bar,
        )

        rng = np.random.default_rng(self.seed)
        d = self.dim
        self.w_in = rng.standard_normal((latent_channels, d)) / math.sqrt(latent_channels)
        self.w_out = rng.standard_normal((d, latent_channels)) / math.sqrt(d)
        self.weights = []
        for _ in self.layers:
            per_block = {}
            for b in BLOCKS:
                per_block[b] = {
                    "q": logit_gain * rng.standard_normal((d, d)) / math.sqrt(d),
                    "k": rng.standard_normal((d, d)) / math.sqrt(d),
                    "v": rng.standard_normal((d, d)) / math.sqrt(d),
                    "o": rng.standard_normal((d, d)) / math.sqrt(d),
                }
            self.weights.append(per_block)
        self.text_source = rng.standard_normal((text_len, d))
        self.text_target = self.text_source.copy()
        start, end = self.target_span
        if not 0 <= start <= end < text_len:
            raise ValueError(f"target span {target_span} outside prompt of length {text_len}")
        self.text_target[start:end + 1] = rng.standard_normal((end - start + 1, d))
        self.loa = rng.standard_normal((loa_len, d))
        self.channel_gain = rng.uniform(0.5, 1.5, latent_channels)
        self.channel_bias = rng.uniform(-0.5, 0.5, latent_channels)
        self._noise_seed = int(rng.integers(2**63 - 1))

    @property
    def latent_grid(self):
        return self.layers[0].grid

    @property
    def down_layers(self):
        return frozenset(i for i, layer in enumerate(self.layers) if layer.down)

    def fingerprint(self) -> str:
        blob = json.dumps(self._init_kwargs, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def alpha_bars(self, steps):
        """Cumulative signal fractions for noise levels ``0..steps`` (geometric decay)."""
        return self.min_alpha_bar ** (np.arange(steps + 1) / steps)

    def noise(self, steps):
        rng = np.random.default_rng([self._noise_seed, steps])
        return rng.standard_normal((steps,) + tuple(self.latent_grid) + (self.channels,))

    def encode(self, x0) -> np.ndarray:
        """Map a (log-)mel spectrogram onto the latent grid."""
        values = x0.values if isinstance(x0, MelSpectrogram) else np.asarray(x0, dtype=np.float64)
        if values.ndim != 2 or 0 in values.shape:
            raise ValueError(f"x0 must be a non-empty 2-D spectrogram, got shape {values.shape}")
        std = values.std()
        normed = (values - values.mean()) / std if std > 0 else np.zeros_like(values)
        grid = resize_array(normed, self.latent_grid)
        return grid[:, :, None] * self.channel_gain + self.channel_bias

    def _split(self, x):
        return x.reshape(x.shape[0], self.heads, self.head_dim).transpose(1, 0, 2)

    def forward(self, z, text, attend, guidance_scale=1.0):
        """Noise-model residual for latent ``z``.

        ``attend(layer, block, energy)`` returns the attention probabilities to
        use for the given raw logits.
        """
        grid = self.latent_grid
        h = z.reshape(-1, self.channels) @ self.w_in
        for li, layer in enumerate(self.layers):
            h = _resize_tokens(h, grid, layer.grid)
            grid = layer.grid
            for block in self.blocks:
                w = self.weights[li][block]
                x = _rms_norm(h)
                context = {"sa": x, "text": text, "loa": self.loa}[block]
                q = self._split(x @ w["q"])
                k = self._split(context @ w["k"])
                v = self._split(context @ w["v"])
                probs = attend(li, block, cal.attention_energy(q, k))
                out = (probs @ v).transpose(1, 0, 2).reshape(h.shape[0], self.dim) @ w["o"]
                gain = self.text_gain * guidance_scale if block == "text" else 1.0
                h = h + gain * out
        h = _resize_tokens(h, grid, self.latent_grid)
        eps = self.readout_scale * (_rms_norm(h) @ self.w_out)
        return eps.reshape(tuple(self.latent_grid) + (self.channels,))


@dataclass
class LogitCache:
    """Raw ``sa``/``loa`` logits per (step, layer, block), stored as float32."""

    steps: int
    fingerprint: str
    logits: dict = field(default_factory=dict)

    def get(self, step, layer, block) -> np.ndarray:
        return self.logits[(step, layer, block)]

    def __len__(self):
        return len(self.logits)

    def save(self, directory) -> list:
        directory = Path(directory)
        layers = sorted({k[1] for k in self.logits})
        blocks = sorted({k[2] for k in self.logits})
        written = []
        for li in layers:
            for b in blocks:
                stacked = np.stack([self.logits[(s, li, b)] for s in range(self.steps)])
                path = directory / f"{b}_l{li}.f32"
                write_tensor(path, stacked, kind=f"logits:{b}:{li}")
                written.append(path)
        meta = {"steps": self.steps, "fingerprint": self.fingerprint, "layers": layers, "blocks": blocks}
        atomic_write_bytes(directory / "cache.json", json.dumps(meta, indent=2).encode())
        written.append(directory / "cache.json")
        return written

    @classmethod
    def load(cls, directory) -> "LogitCache":
        directory = Path(directory)
        meta = json.loads((directory / "cache.json").read_text())
        cache = cls(meta["steps"], meta["fingerprint"])
        for li in meta["layers"]:
            for b in meta["blocks"]:
                stacked = read_tensor(directory / f"{b}_l{li}.f32").values
                for s in range(cache.steps):
                    cache.logits[(s, li, b)] = stacked[s]
        return cache


@dataclass
class EditTrace:
    """Latent trajectories of both paths plus per-step attention entropies.

    ``latents[k]`` is the edited latent at noise level ``k`` (``latents[0]``
    is the final result); ``source_latents`` is the inversion trajectory.
    ``entropy[s, layer, block, variant]`` is indexed by editing step ``s``
    (0 = first, noisiest step) and is NaN where a variant does not apply.
    """

    latents: np.ndarray
    source_latents: np.ndarray
    entropy: np.ndarray
    layer_set: frozenset

    @property
    def steps(self):
        return self.entropy.shape[0]

    @property
    def final(self):
        return self.latents[0]

    def series(self, block, variant, layers=None):
        """Per-step entropy averaged over ``layers`` (default: the calibrated set)."""
        layers = sorted(self.layer_set if layers is None else layers)
        if not layers:
            raise ValueError("no layers to average over")
        values = self.entropy[:, layers, BLOCKS.index(block), VARIANTS.index(variant)]
        return values.mean(axis=1)


def _entropy(probs):
    return float(_backend.row_entropy(probs, ENTROPY_EPS).mean())


def invert(x0, model: ToyModel, steps: int):
    """Noise ``x0``'s latent over ``steps`` levels, caching raw logits at each.

    Returns ``(z_T, cache, trajectory)`` where ``trajectory[k]`` is the latent
    at noise level ``k``.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    z = model.encode(x0)
    abar = model.alpha_bars(steps)
    noise = model.noise(steps)
    cache = LogitCache(steps, model.fingerprint())
    trajectory = [z]
    for k in range(steps):
        eps = noise[k]
        x0_hat = (z - math.sqrt(1 - abar[k]) * eps) / math.sqrt(abar[k])
        z = math.sqrt(abar[k + 1]) * x0_hat + math.sqrt(1 - abar[k + 1]) * eps
        trajectory.append(z)

        def attend(li, block, energy, k=k):
            if block in CACHED_BLOCKS:
                cache.logits[(k, li, block)] = energy.astype(np.float32)
            return cal.softmax_rows(energy)

        model.forward(z, model.text_source, attend)
    return z, cache, np.stack(trajectory)


def _check_cache(cache, model, steps):
    if cache.fingerprint != model.fingerprint():
        raise ValueError("logit cache was produced by a different model")
    if cache.steps != steps:
        raise ValueError(f"cache holds {cache.steps} steps, trajectory has {steps}")


def _denoise(model, z_T, cache, source_trajectory, make_attend, guidance_scale):
    steps = cache.steps
    abar = model.alpha_bars(steps)
    noise = model.noise(steps)
    latents = [None] * (steps + 1)
    latents[steps] = z_T
    entropy = np.full((steps, len(model.layers), len(BLOCKS), len(VARIANTS)), np.nan)
    z = z_T
    for k in range(steps - 1, -1, -1):
        s = steps - 1 - k
        attend = make_attend(k, s, entropy[s])
        eps = noise[k] + model.forward(z, model.text_target, attend, guidance_scale)
        x0_hat = (z - math.sqrt(1 - abar[k + 1]) * eps) / math.sqrt(abar[k + 1])
        z = math.sqrt(abar[k]) * x0_hat + math.sqrt(1 - abar[k]) * eps
        latents[k] = z
    return EditTrace(np.stack(latents), source_trajectory, entropy, frozenset())


def edit(
    z_T,
    cache: LogitCache,
    prior: AcousticPrior,
    mask: cal.TokenMask,
    config: cal.CalibrationConfig,
    model: ToyModel,
    source_trajectory=None,
) -> EditTrace:
    """Calibrated editing pass from ``z_T`` back to noise level 0."""
    if not isinstance(prior, AcousticPrior):
        raise ValueError("prior kind missing: pass an AcousticPrior")
    steps = cache.steps
    _check_cache(cache, model, steps)
    layer_set = model.down_layers if config.layer_set is None else config.layer_set
    if not layer_set <= set(range(len(model.layers))):
        raise ValueError(f"layer set {sorted(layer_set)} not within model layers")
    if mask.bits.shape[0] != model.text_len:
        raise ValueError(f"token mask length {mask.bits.shape[0]} != prompt length {model.text_len}")
    g_per_layer = {li: flatten(resize(prior, model.layers[li].grid)) for li in layer_set}

    def make_attend(k, s, ent):
        lam = cal.lambda_at(config, s, steps)

        def attend(li, block, energy):
            bi = BLOCKS.index(block)
            if block in CACHED_BLOCKS:
                src = cache.get(k, li, block)
                ent[li, bi, 0] = _entropy(cal.softmax_rows(src))
            current = cal.softmax_rows(energy)
            ent[li, bi, 1] = _entropy(current)
            if li not in layer_set:
                ent[li, bi, 2] = ent[li, bi, 1]
                return current
            g = g_per_layer[li]
            if block == "text":
                probs = cal.softmax_rows(cal.acoustic_modulate(energy, g, mask, lam))
            else:
                probs = cal.softmax_rows(cal.source_interpolate(src, energy, g))
                ent[li, bi, 3] = _entropy(cal.post_softmax_mix(src, energy, g))
            ent[li, bi, 2] = _entropy(probs)
            return probs

        return attend

    if source_trajectory is None:
        source_trajectory = np.full((steps + 1,) + np.shape(z_T), np.nan)
    trace = _denoise(model, z_T, cache, source_trajectory, make_attend, config.guidance_scale)
    trace.layer_set = frozenset(layer_set)
    return trace


def reconstruct(
    z_T,
    cache: LogitCache,
    model: ToyModel,
    layer_set=None,
    guidance_scale=cal.DEFAULT_GUIDANCE,
    source_trajectory=None,
) -> EditTrace:
    """Reference pass: cached ``sa``/``loa`` attention replayed verbatim in ``layer_set``.

    Text cross-attention and layers outside ``layer_set`` run unmodified. This
    path does not go through the calibration operators, so it serves as an
    independent check that zero prior and zero modulation preserve the source.
    """
    steps = cache.steps
    _check_cache(cache, model, steps)
    layer_set = model.down_layers if layer_set is None else frozenset(layer_set)

    def make_attend(k, s, ent):
        def attend(li, block, energy):
            bi = BLOCKS.index(block)
            if li in layer_set and block in CACHED_BLOCKS:
                probs = cal.softmax_rows(cache.get(k, li, block))
            else:
                probs = cal.softmax_rows(energy)
            ent[li, bi, 2] = _entropy(probs)
            return probs

        return attend

    if source_trajectory is None:
        source_trajectory = np.full((steps + 1,) + np.shape(z_T), np.nan)
    trace = _denoise(model, z_T, cache, source_trajectory, make_attend, guidance_scale)
    trace.layer_set = frozenset(layer_set)
    return trace


def entropy_rows(trace: EditTrace):
    """Per-step layer-averaged entropies as ``(header, rows)`` for CSV output."""
    header = ["step"]
    columns = []
    for block in BLOCKS:
        for variant in VARIANTS:
            bi, vi = BLOCKS.index(block), VARIANTS.index(variant)
            layers = sorted(trace.layer_set)
            if layers and not np.all(np.isnan(trace.entropy[:, layers, bi, vi])):
                header.append(f"{block}_{variant}")
                columns.append(trace.series(block, variant))
    rows = [[s] + [float(c[s]) for c in columns] for s in range(trace.steps)]
    return header, rows
