"""NumPy / pure-Python implementations of the hot kernels.

Used when the compiled ``_kernels`` extension is unavailable or when
``STEMCAL_PURE_PYTHON=1`` is set. Signatures and semantics match the
Cython module exactly; only the floating-point summation order may differ.
"""

import numpy as np


def sosfilt(sos, x):
    """Run a cascade of biquads (transposed direct form II) over ``x``."""
    sos = np.asarray(sos, dtype=np.float64)
    y = [float(v) for v in np.asarray(x, dtype=np.float64)]
    for b0, b1, b2, _, a1, a2 in sos.tolist():
        z1 = z2 = 0.0
        for n, xn in enumerate(y):
            yn = b0 * xn + z1
            z1 = b1 * xn - a1 * yn + z2
            z2 = b2 * xn - a2 * yn
            y[n] = yn
    return np.array(y, dtype=np.float64)


def interpolate_rows(src, curr, g):
    src = np.asarray(src, dtype=np.float64)
    curr = np.asarray(curr, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)[:, None]
    mixed = (1.0 - g) * src + g * curr
    # endpoints must reproduce their inputs bit for bit
    mixed = np.where(g == 0.0, src, mixed)
    return np.where(g == 1.0, curr, mixed)


def add_outer_bias(energy, g, m, lam):
    energy = np.asarray(energy, dtype=np.float64)
    bias = np.outer(lam * np.asarray(g, dtype=np.float64), np.asarray(m, dtype=np.float64))
    return np.where(bias != 0.0, energy + bias, energy)


def softmax_rows(energy):
    energy = np.asarray(energy, dtype=np.float64)
    shifted = np.exp(energy - energy.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


def row_entropy(probs, eps):
    probs = np.asarray(probs, dtype=np.float64)
    return np.maximum(-(probs * np.log(probs + eps)).sum(axis=-1), 0.0)
