"""Numeric inner loops with a numba path and a pure-numpy fallback.

The backend is chosen once at import time. Set ``JSQA_DISABLE_NUMBA=1`` to force
the numpy path (useful for debugging or platforms without numba). Both variants
of every kernel are importable under ``<name>_numba`` / ``<name>_numpy`` so they
can be compared directly; the unsuffixed name is the selected one.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    _HAVE_NUMBA = False

_DISABLED = os.environ.get("JSQA_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}
USE_NUMBA = _HAVE_NUMBA and not _DISABLED
BACKEND = "numba" if USE_NUMBA else "numpy"

_NJIT_OPTS = dict(cache=True, nogil=True, fastmath=False)


def _njit(fn):
    if not _HAVE_NUMBA:
        return fn
    return numba.njit(**_NJIT_OPTS)(fn)


# ---------------------------------------------------------------------------
# polyphase FIR resampling
# ---------------------------------------------------------------------------


def _resample_loop(x, h, up, down, delay, n_out):
    # y[m] = sum_j h[j] * xu[m*down + delay - j], xu = x upsampled by zero insertion
    y = np.zeros(n_out, dtype=np.float64)
    n_x = x.shape[0]
    n_h = h.shape[0]
    for m in range(n_out):
        p = m * down + delay
        j = p % up
        acc = 0.0
        while j < n_h:
            xi = (p - j) // up
            if xi < 0:
                break
            if xi < n_x:
                acc += h[j] * x[xi]
            j += up
        y[m] = acc
    return y


_resample_numba = _njit(_resample_loop)


def resample_polyphase_numba(x, h, up, down, delay, n_out):
    return _resample_numba(
        np.ascontiguousarray(x, dtype=np.float64),
        np.ascontiguousarray(h, dtype=np.float64),
        int(up), int(down), int(delay), int(n_out),
    )


def resample_polyphase_numpy(x, h, up, down, delay, n_out, chunk=65536):
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    n_taps = -(-h.shape[0] // up)
    h_pad = np.concatenate([h, np.zeros(n_taps * up - h.shape[0] + 1)])
    x_pad = np.concatenate([x, [0.0]])  # index -1 / out-of-range lands here
    t = np.arange(n_taps)
    y = np.empty(n_out, dtype=np.float64)
    for start in range(0, n_out, chunk):
        m = np.arange(start, min(start + chunk, n_out))
        p = m * down + delay
        j = (p % up)[:, None] + up * t[None, :]
        xi = (p[:, None] - j) // up
        valid = (j < h.shape[0]) & (xi >= 0) & (xi < x.shape[0])
        j = np.where(valid, j, h_pad.shape[0] - 1)
        xi = np.where(valid, xi, x.shape[0])
        y[start:start + m.shape[0]] = np.sum(h_pad[j] * x_pad[xi], axis=1)
    return y


# ---------------------------------------------------------------------------
# SI-SDR energies
# ---------------------------------------------------------------------------


def _si_sdr_loop(ref, est):
    n = ref.shape[0]
    dot = 0.0
    ref_energy = 0.0
    for i in range(n):
        dot += ref[i] * est[i]
        ref_energy += ref[i] * ref[i]
    alpha = dot / ref_energy
    target_energy = 0.0
    residual_energy = 0.0
    for i in range(n):
        t = alpha * ref[i]
        e = est[i] - t
        target_energy += t * t
        residual_energy += e * e
    return target_energy, residual_energy


_si_sdr_numba = _njit(_si_sdr_loop)


def si_sdr_energies_numba(ref, est):
    """Return (||target||^2, ||residual||^2) for projecting ``est`` onto ``ref``."""
    return _si_sdr_numba(
        np.ascontiguousarray(ref, dtype=np.float64),
        np.ascontiguousarray(est, dtype=np.float64),
    )


def si_sdr_energies_numpy(ref, est):
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    alpha = np.dot(ref, est) / np.dot(ref, ref)
    target = alpha * ref
    residual = est - target
    return float(np.dot(target, target)), float(np.dot(residual, residual))


# ---------------------------------------------------------------------------
# linear SVM: one epoch of per-sample hinge subgradient steps
# ---------------------------------------------------------------------------


def _svm_epoch_loop(X, y, w, b, order, lr, C):
    # objective per sample: 0.5*|w|^2 / n + C * max(0, 1 - y*(w.x + b))
    n, d = X.shape
    w = w.copy()
    for k in range(order.shape[0]):
        i = order[k]
        score = b
        for f in range(d):
            score += w[f] * X[i, f]
        active = y[i] * score < 1.0
        for f in range(d):
            g = w[f] / n
            if active:
                g -= C * y[i] * X[i, f]
            w[f] -= lr * g
        if active:
            b += lr * C * y[i]
    return w, b


_svm_epoch_numba = _njit(_svm_epoch_loop)


def svm_epoch_numba(X, y, w, b, order, lr, C):
    return _svm_epoch_numba(
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(y, dtype=np.float64),
        np.ascontiguousarray(w, dtype=np.float64),
        float(b),
        np.ascontiguousarray(order, dtype=np.int64),
        float(lr),
        float(C),
    )


def svm_epoch_numpy(X, y, w, b, order, lr, C):
    # Sequential by nature; vectorised over the feature axis only.
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.array(w, dtype=np.float64)
    b = float(b)
    n = X.shape[0]
    for i in np.asarray(order, dtype=np.int64):
        x = X[i]
        active = y[i] * (b + float(np.dot(w, x))) < 1.0
        g = w / n
        if active:
            g = g - C * y[i] * x
            b += lr * C * y[i]
        w -= lr * g
    return w, b


# ---------------------------------------------------------------------------
# average (fractional) ranks
# ---------------------------------------------------------------------------


def _average_ranks_loop(x, sorter):
    n = x.shape[0]
    ranks = np.empty(n, dtype=np.float64)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and x[sorter[j + 1]] == x[sorter[i]]:
            j += 1
        r = 0.5 * (i + j) + 1.0
        for k in range(i, j + 1):
            ranks[sorter[k]] = r
        i = j + 1
    return ranks


_average_ranks_numba = _njit(_average_ranks_loop)


def average_ranks_numba(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    sorter = np.argsort(x, kind="mergesort")
    return _average_ranks_numba(x, sorter)


def average_ranks_numpy(x):
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    sorter = np.argsort(x, kind="mergesort")
    xs = x[sorter]
    new_group = np.r_[True, xs[1:] != xs[:-1]]
    group = np.cumsum(new_group) - 1
    starts = np.r_[np.flatnonzero(new_group), n]
    avg = 0.5 * (starts[group] + starts[group + 1] - 1) + 1.0
    ranks = np.empty(n, dtype=np.float64)
    ranks[sorter] = avg
    return ranks


if USE_NUMBA:
    resample_polyphase = resample_polyphase_numba
    si_sdr_energies = si_sdr_energies_numba
    svm_epoch = svm_epoch_numba
    average_ranks = average_ranks_numba
else:
    resample_polyphase = resample_polyphase_numpy
    si_sdr_energies = si_sdr_energies_numpy
    svm_epoch = svm_epoch_numpy
    average_ranks = average_ranks_numpy
