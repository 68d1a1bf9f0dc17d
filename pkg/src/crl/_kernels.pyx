# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: ggg template, matched-filter correlation, threshold runs."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def ggg(const unsigned char[::1] outcomes):
    cdef Py_ssize_t n = outcomes.shape[0]
    cdef Py_ssize_t i
    if n < 3:
        return np.zeros(0, dtype=np.uint8)
    out = np.empty(n - 2, dtype=np.uint8)
    cdef unsigned char[::1] o = out
    for i in range(n - 2):
        o[i] = (outcomes[i] | outcomes[i + 1] | outcomes[i + 2]) == 0
    return out


def mf_correlate(const unsigned char[::1] bits, Py_ssize_t pre, Py_ssize_t post,
                 double r, double c):
    """y[i] = c * sum(bits[i:i+K]) + sum_k r**k bits[i+pre+k], k < post.

    Single backward pass; the exponential tail is a truncated geometric
    recursion held in a ring buffer of `post` values.
    """
    cdef Py_ssize_t n = bits.shape[0]
    cdef Py_ssize_t K = pre + post
    if n < K:
        return np.zeros(0, dtype=np.float64)
    out = np.empty(n - K + 1, dtype=np.float64)
    cdef double[::1] y = out
    ring_arr = np.zeros(post, dtype=np.float64)
    cdef double[::1] ring = ring_arr
    cdef double rq = r ** post
    cdef double S = 0.0, E
    cdef long long W = 0
    cdef Py_ssize_t m, i, slot = (n - 1) % post
    cdef Py_ssize_t last = n - K
    for m in range(n - K, n):
        W += bits[m]
    m = n - 1
    while m >= pre:
        S = bits[m] + r * S
        E = S - rq * ring[slot]
        ring[slot] = S
        i = m - pre
        if i <= last:
            if i < last:
                W += <long long>bits[i] - <long long>bits[i + K]
            y[i] = c * W + E
        if slot == 0:
            slot = post - 1
        else:
            slot -= 1
        m -= 1
    return out


def supra_runs(const double[::1] y, double threshold):
    """Contiguous runs with y > threshold: (start, stop, argmax, max) arrays."""
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t i, start = -1, best_i = 0
    cdef double best = 0.0
    starts, stops, argmaxes, peaks = [], [], [], []
    for i in range(n):
        if y[i] > threshold:
            if start < 0:
                start = i
                best = y[i]
                best_i = i
            elif y[i] > best:
                best = y[i]
                best_i = i
        elif start >= 0:
            starts.append(start); stops.append(i); argmaxes.append(best_i); peaks.append(best)
            start = -1
    if start >= 0:
        starts.append(start); stops.append(n); argmaxes.append(best_i); peaks.append(best)
    return (np.asarray(starts, dtype=np.int64), np.asarray(stops, dtype=np.int64),
            np.asarray(argmaxes, dtype=np.int64), np.asarray(peaks, dtype=np.float64))
