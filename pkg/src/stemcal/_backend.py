"""Kernel backend selection.

The compiled Cython extension is preferred; the NumPy fallback is used when
it is missing or when ``STEMCAL_PURE_PYTHON`` is set to a truthy value.
"""

import os

import numpy as np

from stemcal import _kernels_py

_FORCE_PURE = os.environ.get("STEMCAL_PURE_PYTHON", "").lower() in ("1", "true", "yes")

try:
    if _FORCE_PURE:
        raise ImportError("pure-Python backend forced")
    from stemcal import _kernels as _compiled
except ImportError:
    _compiled = None

BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

NAME = "cython" if _compiled is not None else "python"


def _impl(backend):
    return BACKENDS[backend or NAME]


def _as3d(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim == 2:
        return a[None], True
    if a.ndim != 3:
        raise ValueError(f"expected a 2-D or 3-D logit tensor, got {a.ndim}-D")
    return a, False


def sosfilt(sos, x, backend=None):
    sos = np.ascontiguousarray(sos, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    return _impl(backend).sosfilt(sos, x)


def interpolate_rows(src, curr, g, backend=None):
    src, squeeze = _as3d(src)
    curr, _ = _as3d(curr)
    out = _impl(backend).interpolate_rows(src, curr, np.ascontiguousarray(g, dtype=np.float64))
    return out[0] if squeeze else out


def add_outer_bias(energy, g, m, lam, backend=None):
    energy, squeeze = _as3d(energy)
    out = _impl(backend).add_outer_bias(
        energy,
        np.ascontiguousarray(g, dtype=np.float64),
        np.ascontiguousarray(m, dtype=np.float64),
        float(lam),
    )
    return out[0] if squeeze else out


def softmax_rows(energy, backend=None):
    energy = np.ascontiguousarray(energy, dtype=np.float64)
    flat = energy.reshape(-1, energy.shape[-1])
    return _impl(backend).softmax_rows(flat).reshape(energy.shape)


def row_entropy(probs, eps, backend=None):
    probs = np.ascontiguousarray(probs, dtype=np.float64)
    flat = probs.reshape(-1, probs.shape[-1])
    return _impl(backend).row_entropy(flat, float(eps)).reshape(probs.shape[:-1])
