"""Recovery fits, coincidence tables, delay and inter-arrival statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import stats as sps

from .model import NS_PER_S, EventRecord
from .preprocess import BinnedSeries


@dataclass(frozen=True)
class RecoveryFit:
    channel: str
    t0: float
    tau_hat: Optional[float]
    tau_sigma: Optional[float]
    amplitude: float
    baseline: float
    converged: bool
    n_points: int = 0
    iterations: int = 0


def _model(params: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    A, tau, B = params
    e = np.exp(-t / tau)
    J = np.column_stack([e, A * t * e / tau**2, np.ones_like(t)])
    return A * e + B, J


def _project(p: np.ndarray, tau_min: float) -> np.ndarray:
    A, tau, B = p
    return np.array([min(max(A, 1e-12), 1.0), max(tau, tau_min), max(B, 0.0)])


def _initial_guess(t: np.ndarray, y: np.ndarray, tau_guess: float) -> np.ndarray:
    tail = y[int(0.8 * y.size) :]
    B0 = max(0.0, float(np.median(tail))) if tail.size else 0.0
    z = y - B0
    ok = z > max(1e-3, 0.02 * float(z.max(initial=0.0)))
    if ok.sum() >= 2:
        slope, icpt = np.polyfit(t[ok], np.log(z[ok]), 1)
        tau0 = -1.0 / slope if slope < 0 else tau_guess
        A0 = math.exp(icpt)
    else:
        tau0, A0 = tau_guess, float(max(z.max(initial=0.0), 1e-3))
    span = float(t[-1] - t[0]) if t.size > 1 else tau_guess
    if not (0 < tau0 < 10 * span):
        tau0 = tau_guess
    return _project(np.array([A0, tau0, B0]), 1e-9)


def gauss_newton_exp(
    t: np.ndarray,
    y: np.ndarray,
    p0: np.ndarray,
    max_iter: int = 200,
    tol: float = 1e-12,
    tau_min: float = 1e-9,
) -> tuple[np.ndarray, bool, int, np.ndarray]:
    """Damped Gauss-Newton for y = A exp(-t/tau) + B with A in (0, 1], B >= 0.

    Steps are halved until the residual sum of squares drops; bounds are
    enforced by projection. Returns (params, converged, iterations, J at optimum).
    """
    p = _project(np.asarray(p0, dtype=np.float64), tau_min)
    f, J = _model(p, t)
    r = y - f
    cost = float(r @ r)
    lam = 1e-3
    for it in range(1, max_iter + 1):
        JtJ = J.T @ J
        g = J.T @ r
        scale = np.sqrt(np.maximum(np.diag(JtJ), 1e-300))
        try:
            step = np.linalg.solve(JtJ + lam * np.diag(scale**2), g)
        except np.linalg.LinAlgError:
            return p, False, it, J
        accepted = False
        alpha = 1.0
        for _ in range(30):
            trial = _project(p + alpha * step, tau_min)
            ft, Jt = _model(trial, t)
            rt = y - ft
            ct = float(rt @ rt)
            if ct <= cost:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # no descent direction left: stationary up to rounding
            return p, bool(np.all(np.isfinite(p))), it, J
        rel = np.max(np.abs(trial - p) / np.maximum(np.abs(p), 1e-12))
        dcost = cost - ct
        p, f, J, r, cost = trial, ft, Jt, rt, ct
        lam = max(lam * 0.3, 1e-12)
        if rel < 1e-10 or dcost <= tol * max(cost, 1e-30):
            return p, True, it, J
    return p, False, max_iter, J


def fit_recovery(
    bs: BinnedSeries,
    t0: float,
    fit_span: Optional[float] = None,
    tau_guess: float = 2.5e-3,
    min_bins: int = 10,
    min_amplitude: float = 1e-3,
) -> RecoveryFit:
    """Exponential recovery fit of p_d over bins starting at or after ``t0`` (seconds).

    ``fit_span`` defaults to max(10 * tau_guess, 50 ms). Time constants are in seconds.
    """
    if fit_span is None:
        fit_span = max(10.0 * tau_guess, 50e-3)
    starts = bs.bin_start_times()
    width = bs.bin_cycles * bs.clock.dt_s
    if bs.p_d.size == 0 or not (starts[0] <= t0 < starts[-1] + width):
        raise ValueError(f"t0 = {t0} s lies outside the series")
    sel = (starts >= t0 - 1e-12) & (starts + width <= t0 + fit_span + 1e-12)
    n = int(sel.sum())
    if n < min_bins:
        raise ValueError(f"only {n} bins after t0; need {min_bins}")
    t = starts[sel] + 0.5 * width - t0
    y = bs.p_d[sel].astype(np.float64)
    p0 = _initial_guess(t, y, tau_guess)
    p, ok, iters, J = gauss_newton_exp(t, y, p0)
    A, tau, B = (float(x) for x in p)
    if not ok or A < min_amplitude or not tau > 0:
        return RecoveryFit(bs.channel, t0, None, None, A, B, False, n, iters)
    resid = y - _model(p, t)[0]
    dof = max(1, n - 3)
    s2 = float(resid @ resid) / dof
    try:
        cov = np.linalg.inv(J.T @ J) * s2
        sigma = float(math.sqrt(max(cov[1, 1], 0.0)))
    except np.linalg.LinAlgError:
        sigma = float("nan")
    return RecoveryFit(bs.channel, t0, tau, sigma, A, B, True, n, iters)


@dataclass(frozen=True)
class RecoveryCDF:
    grid: np.ndarray
    cdf: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    mean_tau: float
    sem_tau: float
    n: int


def recovery_cdf(fits: Sequence[RecoveryFit], n_resamples: int = 1000, seed: int = 0) -> RecoveryCDF:
    """Empirical CDF of fitted tau with a ±1σ band from resampling each fit's uncertainty."""
    good = [f for f in fits if f.converged and f.tau_hat is not None]
    if not good:
        raise ValueError("recovery_cdf needs at least one converged fit")
    tau = np.array([f.tau_hat for f in good])
    sig = np.array([f.tau_sigma if f.tau_sigma is not None and math.isfinite(f.tau_sigma) else 0.0 for f in good])
    grid = np.sort(tau)
    n = tau.size

    def ecdf(samples: np.ndarray) -> np.ndarray:
        return np.searchsorted(np.sort(samples, axis=-1), grid, side="right") / n

    cdf = ecdf(tau)
    rng = np.random.default_rng(seed)
    draws = tau + sig * rng.standard_normal((n_resamples, n))
    curves = np.array([ecdf(d) for d in draws])
    lower, upper = np.percentile(curves, [15.865, 84.135], axis=0)
    mean = float(tau.mean())
    sem = float(tau.std(ddof=1) / math.sqrt(n)) if n > 1 else float(sig[0])
    return RecoveryCDF(grid, cdf, lower, upper, mean, sem, n)


@dataclass
class CoincidenceReport:
    channels: list[str]
    counts: np.ndarray
    conditional: np.ndarray
    window: float
    delays: dict = field(default_factory=dict)

    def conditional_of(self, row: str, col: str) -> float:
        return float(self.conditional[self.channels.index(row), self.channels.index(col)])

    def count_of(self, row: str, col: str) -> int:
        return int(self.counts[self.channels.index(row), self.channels.index(col)])


def _greedy_match(a: np.ndarray, b: np.ndarray, window_ns: int) -> list[tuple[int, int]]:
    """One-to-one pairs with |a_i - b_j| < window, closest pairs first."""
    cand = []
    for i, t in enumerate(a):
        lo = np.searchsorted(b, t - window_ns, side="right")
        hi = np.searchsorted(b, t + window_ns, side="left")
        for j in range(lo, hi):
            cand.append((abs(int(t) - int(b[j])), i, j))
    cand.sort()
    used_a, used_b, pairs = set(), set(), []
    for _, i, j in cand:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j))
    return sorted(pairs)


def coincidence_matrix(event_lists: Mapping[str, Sequence[EventRecord]], window: float = 1e-3) -> CoincidenceReport:
    """Counts (diagonal totals, off-diagonal matched pairs) and P(row | col).

    ``window`` is in seconds; delays are start_row - start_col in seconds.
    """
    labels = list(event_lists)
    w_ns = int(round(window * NS_PER_S))
    starts = {k: np.sort(np.array([e.start_ns for e in v], dtype=np.int64)) for k, v in event_lists.items()}
    n = len(labels)
    counts = np.zeros((n, n), dtype=np.int64)
    delays = {}
    for i, a in enumerate(labels):
        counts[i, i] = starts[a].size
        for j in range(i + 1, n):
            b = labels[j]
            pairs = _greedy_match(starts[a], starts[b], w_ns)
            counts[i, j] = counts[j, i] = len(pairs)
            d = np.array([starts[a][p] - starts[b][q] for p, q in pairs], dtype=np.int64) / NS_PER_S
            delays[(a, b)] = d
            delays[(b, a)] = -d
    cond = np.zeros((n, n))
    for c in range(n):
        if counts[c, c] > 0:
            cond[:, c] = counts[:, c] / counts[c, c]
    return CoincidenceReport(labels, counts, cond, window, delays)


@dataclass(frozen=True)
class DelayHistogram:
    edges: np.ndarray
    counts: np.ndarray
    mean: Optional[float]
    sigma: Optional[float]
    n: int


def delay_histogram(report: CoincidenceReport, pair: tuple[str, str], n_bins: int = 40, min_pairs: int = 5) -> DelayHistogram:
    d = np.asarray(report.delays.get(tuple(pair), np.zeros(0)), dtype=np.float64)
    edges = np.linspace(-report.window, report.window, n_bins + 1)
    counts, _ = np.histogram(d, bins=edges)
    if d.size < min_pairs:
        return DelayHistogram(edges, counts, None, None, int(d.size))
    # Gaussian maximum likelihood: sample mean and population std
    return DelayHistogram(edges, counts, float(d.mean()), float(d.std()), int(d.size))


@dataclass(frozen=True)
class IntervalStats:
    intervals: np.ndarray
    lambda_hat: float
    lambda_sigma: float
    edges: np.ndarray
    histogram: np.ndarray
    gof_pvalue: Optional[float]
    gof_dof: int = 0


def _exp_gof(x: np.ndarray, lam: float, edges: np.ndarray, min_expected: float = 5.0) -> tuple[Optional[float], int]:
    n = x.size
    lo = edges[:-1]
    # last bin open-ended so observed and expected totals agree
    idx = np.clip(np.searchsorted(lo, x, side="right") - 1, 0, lo.size - 1)
    obs = np.bincount(idx, minlength=lo.size).astype(np.float64)
    cdf = -np.expm1(-lam * np.append(lo, np.inf))
    exp_counts = n * np.diff(cdf)
    # pool low-expectation bins from the right
    o_pool, e_pool = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(obs[::-1], exp_counts[::-1]):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            o_pool.append(o_acc)
            e_pool.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 and e_pool:
        o_pool[-1] += o_acc
        e_pool[-1] += e_acc
    k = len(e_pool)
    dof = k - 2
    if dof < 1:
        return None, 0
    o_arr, e_arr = np.array(o_pool), np.array(e_pool)
    chi2 = float(np.sum((o_arr - e_arr) ** 2 / e_arr))
    return float(sps.chi2.sf(chi2, dof)), dof


def _fd_bins(x: np.ndarray, cap: int = 1000) -> int:
    """Freedman-Diaconis bin count, capped so a near-zero IQR cannot explode it."""
    q75, q25 = np.percentile(x, [75, 25])
    h = 2.0 * (q75 - q25) / x.size ** (1.0 / 3.0)
    if not h > 0:
        return 1
    return int(min(cap, x.size, max(1, math.ceil(float(x.max()) / h))))


def interarrival_stats(events: Sequence, n_hist_bins: Optional[int] = None) -> IntervalStats:
    """Exponential MLE of the event rate plus a chi-square check of the interval histogram.

    ``events`` may be EventRecords or start times in seconds.
    """
    if len(events) < 2:
        raise ValueError("need at least two events")
    if isinstance(events[0], EventRecord):
        t = np.sort(np.array([e.start_ns for e in events], dtype=np.int64)) / NS_PER_S
    else:
        t = np.sort(np.asarray(events, dtype=np.float64))
    x = np.diff(t)
    m = x.size
    lam = m / float(x.sum())
    lam_sig = lam / math.sqrt(m)
    if n_hist_bins is None:
        edges = np.linspace(0.0, float(x.max()), _fd_bins(x) + 1)
    else:
        edges = np.linspace(0.0, float(x.max()), n_hist_bins + 1)
    hist, _ = np.histogram(x, bins=edges)
    pval, dof = (None, 0) if m < 2 else _exp_gof(x, lam, edges)
    return IntervalStats(x, lam, lam_sig, edges, hist, pval, dof)


def chance_coincidence(lam: float, window: float, n_samples: float = 0.0) -> tuple[float, float]:
    """Poisson probability of single events in two channels in one window, and the expected count."""
    if lam < 0 or not window > 0:
        raise ValueError("need lambda >= 0 and window > 0")
    x = lam * window
    p = (math.exp(-x) * x) ** 2
    return p, p * n_samples
