# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: biquad cascade and per-row attention math.

All loops are serial; results do not depend on any thread schedule.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


def sosfilt(double[:, ::1] sos, double[::1] x):
    cdef Py_ssize_t n_sec = sos.shape[0], n = x.shape[0]
    cdef Py_ssize_t s, i
    cdef double b0, b1, b2, a1, a2, z1, z2, xn, yn
    out = np.array(x, dtype=np.float64, copy=True)
    cdef double[::1] y = out
    for s in range(n_sec):
        b0 = sos[s, 0]
        b1 = sos[s, 1]
        b2 = sos[s, 2]
        a1 = sos[s, 4]
        a2 = sos[s, 5]
        z1 = 0.0
        z2 = 0.0
        for i in range(n):
            xn = y[i]
            yn = b0 * xn + z1
            z1 = b1 * xn - a1 * yn + z2
            z2 = b2 * xn - a2 * yn
            y[i] = yn
    return out


def interpolate_rows(double[:, :, ::1] src, double[:, :, ::1] curr, double[::1] g):
    cdef Py_ssize_t H = src.shape[0], Q = src.shape[1], K = src.shape[2]
    cdef Py_ssize_t h, i, j
    cdef double gi, keep
    out = np.empty((H, Q, K), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    for h in range(H):
        for i in range(Q):
            gi = g[i]
            if gi == 0.0:
                for j in range(K):
                    o[h, i, j] = src[h, i, j]
            elif gi == 1.0:
                for j in range(K):
                    o[h, i, j] = curr[h, i, j]
            else:
                keep = 1.0 - gi
                for j in range(K):
                    o[h, i, j] = keep * src[h, i, j] + gi * curr[h, i, j]
    return out


def add_outer_bias(double[:, :, ::1] energy, double[::1] g, double[::1] m, double lam):
    cdef Py_ssize_t H = energy.shape[0], Q = energy.shape[1], K = energy.shape[2]
    cdef Py_ssize_t h, i, j
    cdef double row, b
    out = np.array(energy, dtype=np.float64, copy=True)
    cdef double[:, :, ::1] o = out
    for h in range(H):
        for i in range(Q):
            row = lam * g[i]
            if row == 0.0:
                continue
            for j in range(K):
                b = row * m[j]
                if b != 0.0:
                    o[h, i, j] = energy[h, i, j] + b
    return out


def softmax_rows(double[:, ::1] energy):
    cdef Py_ssize_t R = energy.shape[0], K = energy.shape[1]
    cdef Py_ssize_t r, j
    cdef double mx, total
    out = np.empty((R, K), dtype=np.float64)
    cdef double[:, ::1] o = out
    for r in range(R):
        mx = energy[r, 0]
        for j in range(1, K):
            if energy[r, j] > mx:
                mx = energy[r, j]
        total = 0.0
        for j in range(K):
            o[r, j] = exp(energy[r, j] - mx)
            total += o[r, j]
        for j in range(K):
            o[r, j] /= total
    return out


def row_entropy(double[:, ::1] probs, double eps):
    cdef Py_ssize_t R = probs.shape[0], K = probs.shape[1]
    cdef Py_ssize_t r, j
    cdef double acc, p
    out = np.empty(R, dtype=np.float64)
    cdef double[::1] o = out
    for r in range(R):
        acc = 0.0
        for j in range(K):
            p = probs[r, j]
            acc -= p * log(p + eps)
        # eps pushes a one-hot row to -log(1 + eps) < 0
        o[r] = acc if acc > 0.0 else 0.0
    return out
