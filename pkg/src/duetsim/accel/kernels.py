"""Numeric kernels evaluated by the accelerator models.

Hot loops carry a numba ``@njit`` implementation and a pure-numpy fallback.
Set ``DUETSIM_DISABLE_NUMBA=1`` (or run without numba installed) to force
the numpy path; both paths return identical results.
"""

from __future__ import annotations

import os
from functools import cache

import numpy as np

try:  # pragma: no cover - depends on the environment
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and os.environ.get("DUETSIM_DISABLE_NUMBA", "").lower() not in ("1", "true", "yes")


def _njit(fn):
    if numba is None:
        return fn
    return numba.njit(cache=True)(fn)


# -- tangent -----------------------------------------------------------------------

TAN_DELTA = 0.01
TAN_SEGMENTS = 128


@cache
def tangent_table(segments: int = TAN_SEGMENTS, delta: float = TAN_DELTA):
    """Breakpoints, slopes and intercepts of the piecewise-linear tangent.

    Breakpoints are uniform in ``asinh(tan x)`` so segments shrink toward the
    poles where curvature grows; the middle breakpoint sits at 0.  Each
    segment's chord is scaled to balance its relative error around zero.
    """
    if segments % 2:
        raise ValueError("segment count must be even so a breakpoint sits at 0")
    xmax = np.pi / 2 - delta
    umax = np.arcsinh(np.tan(xmax))
    xs = np.arctan(np.sinh(np.linspace(-umax, umax, segments + 1)))
    xs[segments // 2] = 0.0
    ys = np.tan(xs)
    slopes = np.empty(segments)
    icepts = np.empty(segments)
    for i in range(segments):
        a, b = xs[i], xs[i + 1]
        k = (ys[i + 1] - ys[i]) / (b - a)
        c = ys[i] - k * a
        grid = np.linspace(a, b, 257)[1:-1]
        t = np.tan(grid)
        rel = (k * grid + c) / t - 1.0
        lo, hi = rel.min(), rel.max()
        scale = 1.0 / (1.0 + 0.5 * (lo + hi))
        slopes[i] = k * scale
        icepts[i] = c * scale
    return xs, slopes, icepts


def _tangent_np(x, xs, slopes, icepts):
    x = np.asarray(x, dtype=np.float64)
    ok = (x >= xs[0]) & (x <= xs[-1])
    idx = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(slopes) - 1)
    y = slopes[idx] * x + icepts[idx]
    y = np.where(x == 0.0, 0.0, y)
    return np.where(ok, y, np.nan), ok


@_njit
def _tangent_nb(x, xs, slopes, icepts):  # pragma: no cover - compiled
    n = x.shape[0]
    y = np.empty(n)
    ok = np.empty(n, dtype=np.bool_)
    m = slopes.shape[0]
    for j in range(n):
        v = x[j]
        if v < xs[0] or v > xs[m] or v != v:
            y[j] = np.nan
            ok[j] = False
            continue
        lo, hi = 0, m
        while hi - lo > 1:  # comparator tree over the breakpoints
            mid = (lo + hi) // 2
            if v >= xs[mid]:
                lo = mid
            else:
                hi = mid
        y[j] = 0.0 if v == 0.0 else slopes[lo] * v + icepts[lo]
        ok[j] = True
    return y, ok


def tangent(x):
    """Piecewise-linear tan over |x| <= pi/2 - 0.01; returns ``(values, in_domain)``."""
    xs, slopes, icepts = tangent_table()
    arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if USE_NUMBA:
        y, ok = _tangent_nb(arr, xs, slopes, icepts)
    else:
        y, ok = _tangent_np(arr, xs, slopes, icepts)
    if np.ndim(x) == 0:
        return float(y[0]), bool(ok[0])
    return y, ok


def tangent_pipeline_depth(segments: int = TAN_SEGMENTS) -> int:
    """Comparator-tree levels + multiply + add + register stages."""
    return int(np.ceil(np.log2(segments))) + 3


# -- popcount -----------------------------------------------------------------------


def _popcount_np(words):
    w = np.ascontiguousarray(words, dtype=np.uint64)
    return np.unpackbits(w.view(np.uint8), axis=-1).reshape(w.shape[0], -1).sum(axis=1).astype(np.int64)


@_njit
def _popcount_nb(words):  # pragma: no cover - compiled
    n = words.shape[0]
    out = np.zeros(n, dtype=np.int64)
    for i in range(n):
        c = 0
        for j in range(words.shape[1]):
            v = words[i, j]
            while v:
                v &= v - np.uint64(1)
                c += 1
        out[i] = c
    return out


def popcount_rows(words) -> np.ndarray:
    """Population count of each row of a 2-D uint64 array."""
    w = np.ascontiguousarray(np.atleast_2d(words), dtype=np.uint64)
    return _popcount_nb(w) if USE_NUMBA else _popcount_np(w)


def popcount512(words) -> int:
    w = np.asarray(words, dtype=np.uint64)
    if w.shape != (8,):
        raise ValueError("a 512-bit vector is eight 64-bit words")
    return int(popcount_rows(w[None, :])[0])


# -- sorting network -------------------------------------------------------------------

SORT_SIZES = (32, 64, 128)


@cache
def batcher_network(n: int) -> tuple[tuple[tuple[int, int], ...], ...]:
    """Batcher odd-even merge sort as a tuple of stages of disjoint comparators."""
    if n < 2 or n & (n - 1):
        raise ValueError("network size must be a power of two >= 2")
    stages = []
    p = 1
    while p < n:
        k = p
        while k >= 1:
            stage = []
            for j in range(k % p, n - k, 2 * k):
                for i in range(min(k, n - j - k)):
                    if (i + j) // (2 * p) == (i + j + k) // (2 * p):
                        stage.append((i + j, i + j + k))
            stages.append(tuple(stage))
            k //= 2
        p *= 2
    return tuple(stages)


@cache
def _network_arrays(n: int):
    stages = batcher_network(n)
    lo = np.array([a for s in stages for a, _ in s], dtype=np.int64)
    hi = np.array([b for s in stages for _, b in s], dtype=np.int64)
    bounds = np.cumsum([0] + [len(s) for s in stages]).astype(np.int64)
    return lo, hi, bounds


def _sortnet_np(rows, lo, hi, bounds):
    out = rows.copy()
    for s in range(len(bounds) - 1):
        a = lo[bounds[s]:bounds[s + 1]]
        b = hi[bounds[s]:bounds[s + 1]]
        x, y = out[:, a], out[:, b]
        out[:, a] = np.minimum(x, y)
        out[:, b] = np.maximum(x, y)
    return out


@_njit
def _sortnet_nb(rows, lo, hi):  # pragma: no cover - compiled
    out = rows.copy()
    for r in range(out.shape[0]):
        for c in range(lo.shape[0]):
            a = lo[c]
            b = hi[c]
            if out[r, a] > out[r, b]:
                t = out[r, a]
                out[r, a] = out[r, b]
                out[r, b] = t
    return out


def sort_network(rows) -> np.ndarray:
    """Sort each row (length 32, 64 or 128) through the comparator network."""
    arr = np.asarray(rows)
    squeeze = arr.ndim == 1
    arr = np.ascontiguousarray(np.atleast_2d(arr))
    n = arr.shape[1]
    if n not in SORT_SIZES:
        raise ValueError(f"unsupported network size {n}; expected one of {SORT_SIZES}")
    lo, hi, bounds = _network_arrays(n)
    out = _sortnet_nb(arr, lo, hi) if USE_NUMBA else _sortnet_np(arr, lo, hi, bounds)
    return out[0] if squeeze else out


# -- Barnes-Hut force ---------------------------------------------------------------------

BH_SOFTENING = 1e-3


def _forces_np(targets, sources, masses, g, eps):
    d = sources - targets
    r2 = np.einsum("ij,ij->i", d, d) + eps * eps
    inv = g * masses / (r2 * np.sqrt(r2))
    return d * inv[:, None]


@_njit
def _forces_nb(targets, sources, masses, g, eps):  # pragma: no cover - compiled
    n = targets.shape[0]
    out = np.empty((n, 3))
    e2 = eps * eps
    for i in range(n):
        dx = sources[i, 0] - targets[i, 0]
        dy = sources[i, 1] - targets[i, 1]
        dz = sources[i, 2] - targets[i, 2]
        r2 = dx * dx + dy * dy + dz * dz + e2
        s = g * masses[i] / (r2 * np.sqrt(r2))
        out[i, 0] = dx * s
        out[i, 1] = dy * s
        out[i, 2] = dz * s
    return out


def pair_forces(targets, sources, masses, g: float = 1.0, eps: float = BH_SOFTENING) -> np.ndarray:
    """Softened monopole force on unit-mass targets from point masses, row by row."""
    t = np.ascontiguousarray(np.atleast_2d(targets), dtype=np.float64)
    s = np.ascontiguousarray(np.atleast_2d(sources), dtype=np.float64)
    m = np.ascontiguousarray(np.atleast_1d(masses), dtype=np.float64)
    return _forces_nb(t, s, m, float(g), float(eps)) if USE_NUMBA else _forces_np(t, s, m, float(g), float(eps))
