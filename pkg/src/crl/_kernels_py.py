"""Pure numpy/scipy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np
from scipy.signal import lfilter


def ggg(outcomes):
    o = np.asarray(outcomes, dtype=np.uint8)
    if o.size < 3:
        return np.zeros(0, dtype=np.uint8)
    return ((o[:-2] | o[1:-1] | o[2:]) == 0).astype(np.uint8)


def mf_correlate(bits, pre, post, r, c):
    b = np.asarray(bits, dtype=np.uint8)
    n = b.size
    K = pre + post
    if n < K:
        return np.zeros(0, dtype=np.float64)
    # S[m] = sum_{j>=m} r**(j-m) b[j], run backwards so the recursion is stable
    S = lfilter([1.0], [1.0, -r], b[::-1].astype(np.float64))[::-1]
    S = np.concatenate([S, np.zeros(post)])
    m = np.arange(pre, n - post + 1)
    E = S[m] - r**post * S[m + post]
    cs = np.concatenate([[0], np.cumsum(b, dtype=np.int64)])
    W = cs[K:] - cs[:-K]
    return c * W + E


def supra_runs(y, threshold):
    y = np.asarray(y, dtype=np.float64)
    mask = np.concatenate([[False], y > threshold, [False]])
    d = np.diff(mask.astype(np.int8))
    starts = np.flatnonzero(d == 1)
    stops = np.flatnonzero(d == -1)
    argmaxes = np.array([s + int(np.argmax(y[s:e])) for s, e in zip(starts, stops)], dtype=np.int64)
    peaks = y[argmaxes] if argmaxes.size else np.zeros(0)
    return starts.astype(np.int64), stops.astype(np.int64), argmaxes, peaks.astype(np.float64)
