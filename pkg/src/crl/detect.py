"""Matched-filter event detection and start-time estimation on ggg error streams."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import kernels
from .model import CycleClock, EventRecord, EventSource, ms
from .preprocess import ErrorStream, QubitTrace, match_template_ggg


@dataclass(frozen=True, eq=False)
class FilterKernel:
    """Zero-sum step-and-decay filter: c before onset, c + a*exp(-t/tau) after."""

    taps: np.ndarray
    tau_ns: float
    window_ns: int
    pre_onset_ns: int
    dt_ns: int
    c: float
    a: float = 1.0

    @property
    def pre_taps(self) -> int:
        return self.pre_onset_ns // self.dt_ns

    @property
    def post_taps(self) -> int:
        return self.taps.size - self.pre_taps

    @property
    def ratio(self) -> float:
        """Per-tap decay factor exp(-dt/tau)."""
        return math.exp(-self.dt_ns / self.tau_ns) if math.isfinite(self.tau_ns) else 1.0

    def __len__(self) -> int:
        return int(self.taps.size)


@dataclass(frozen=True, eq=False)
class ContrastKernel:
    half: int = 100

    @property
    def taps(self) -> np.ndarray:
        return np.concatenate([-np.ones(self.half), np.ones(self.half)])


@dataclass(frozen=True)
class DetectionParams:
    tau_per_channel: dict = field(default_factory=lambda: {"Q1": 2.5, "Q2": 2.5, "Q4": 5.0})
    default_tau_ms: float = 2.5
    candidate_threshold: float = 25.0
    event_threshold: float = 40.0
    min_separation_ms: float = 20.0
    start_search_halfwidth_ms: float = 12.0
    window_ms: float = 24.0
    pre_onset_ms: float = 4.0
    contrast_halfwidth_ms: float = 1.0

    def __post_init__(self) -> None:
        if not self.event_threshold >= self.candidate_threshold > 0:
            raise ValueError("need event_threshold >= candidate_threshold > 0")
        if not self.window_ms > self.pre_onset_ms > 0:
            raise ValueError("need window > pre_onset > 0")
        for label, tau in self.tau_per_channel.items():
            if not tau > 0:
                raise ValueError(f"filter tau for {label} must be positive")
        if self.min_separation_ms < 0 or self.start_search_halfwidth_ms < 0:
            raise ValueError("separations must be non-negative")

    def tau_ms(self, channel: str) -> float:
        return float(self.tau_per_channel.get(channel, self.default_tau_ms))

    def kernel_for(self, channel: str, clock: CycleClock) -> FilterKernel:
        return build_kernel(
            ms(self.tau_ms(channel)), ms(self.window_ms), ms(self.pre_onset_ms), clock.cycle_period_ns
        )


def build_kernel(tau_ns: float, window_ns: int, pre_onset_ns: int, dt_ns: int) -> FilterKernel:
    if not window_ns > pre_onset_ns > 0:
        raise ValueError("need window > pre_onset > 0")
    if window_ns % dt_ns or pre_onset_ns % dt_ns:
        raise ValueError(f"window {window_ns} ns and pre-onset {pre_onset_ns} ns must be multiples of dt {dt_ns} ns")
    if not tau_ns > 0:
        raise ValueError("tau must be positive")
    K = window_ns // dt_ns
    pre = pre_onset_ns // dt_ns
    post = K - pre
    decay = np.exp(-np.arange(post) * dt_ns / tau_ns) if math.isfinite(tau_ns) else np.ones(post)
    c = -math.fsum(decay.tolist()) / K
    taps = np.full(K, c)
    taps[pre:] += decay
    # per-tap rounding grows with K; the far tail absorbs the exact residual,
    # leaving at most half an ulp of that one tap
    taps[-1] -= math.fsum(taps.tolist())
    return FilterKernel(taps, float(tau_ns), int(window_ns), int(pre_onset_ns), int(dt_ns), c)


@dataclass(frozen=True, eq=False)
class CorrelationSeries:
    """values[i] is the filter output with the kernel onset at cycle ``offset + i``."""

    values: np.ndarray
    offset: int
    clock: CycleClock = CycleClock()

    def __len__(self) -> int:
        return int(self.values.size)


def cross_correlate(es: ErrorStream, kernel: FilterKernel) -> CorrelationSeries:
    bits = np.ascontiguousarray(es.bits, dtype=np.uint8)
    y = kernels.mf_correlate(bits, kernel.pre_taps, kernel.post_taps, kernel.ratio, kernel.c)
    return CorrelationSeries(y, es.offset + kernel.pre_taps, es.clock)


def correlate_naive(bits: np.ndarray, kernel: FilterKernel) -> np.ndarray:
    """Direct O(N*K) dot products; reference for the fast path."""
    b = np.asarray(bits, dtype=np.float64)
    K = len(kernel)
    if b.size < K:
        return np.zeros(0)
    return np.array([float(np.dot(kernel.taps, b[i : i + K])) for i in range(b.size - K + 1)])


class StreamingCorrelator:
    """Chunk-fed matched filter holding only the last K - 1 inputs between calls."""

    def __init__(self, kernel: FilterKernel):
        self.kernel = kernel
        self._tail = np.zeros(0, dtype=np.uint8)
        self._consumed = 0  # stream index of the first element of _tail

    def feed(self, bits: np.ndarray) -> tuple[int, np.ndarray]:
        """Returns (onset cycle of the first value, values) newly defined by ``bits``."""
        k = self.kernel
        buf = np.concatenate([self._tail, np.asarray(bits, dtype=np.uint8)])
        y = kernels.mf_correlate(buf, k.pre_taps, k.post_taps, k.ratio, k.c)
        first = self._consumed + k.pre_taps
        keep = min(buf.size, len(k) - 1)
        self._consumed += buf.size - keep
        self._tail = buf[buf.size - keep :].copy()
        return first, y


@dataclass
class _Group:
    start: int
    stop: int
    peak_cycle: int
    peak: float


def _groups_from_runs(offset: int, runs) -> list[_Group]:
    starts, stops, argmaxes, peaks = runs
    return [
        _Group(offset + int(s), offset + int(e), offset + int(a), float(p))
        for s, e, a, p in zip(starts, stops, argmaxes, peaks)
    ]


def _join_touching(groups: list[_Group]) -> list[_Group]:
    """Rejoin runs split by a chunk seam."""
    out: list[_Group] = []
    for g in groups:
        if out and out[-1].stop == g.start:
            last = out[-1]
            last.stop = g.stop
            if g.peak > last.peak:
                last.peak, last.peak_cycle = g.peak, g.peak_cycle
        else:
            out.append(_Group(g.start, g.stop, g.peak_cycle, g.peak))
    return out


def _merge_and_threshold(groups: list[_Group], params: DetectionParams, clock: CycleClock) -> list[_Group]:
    sep = ms(params.min_separation_ms) // clock.cycle_period_ns
    merged: list[_Group] = []
    for g in groups:
        if merged and g.peak_cycle - merged[-1].peak_cycle < sep:
            last = merged[-1]
            last.stop = g.stop
            if g.peak > last.peak:
                last.peak, last.peak_cycle = g.peak, g.peak_cycle
        else:
            merged.append(_Group(g.start, g.stop, g.peak_cycle, g.peak))
    return [g for g in merged if g.peak >= params.event_threshold]


def _to_records(groups: list[_Group], channel: str, clock: CycleClock) -> list[EventRecord]:
    return [
        EventRecord(
            channel,
            g.peak_cycle * clock.cycle_period_ns,
            EventSource.DETECTED,
            peak_height=g.peak,
            extra={"peak_cycle": g.peak_cycle},
        )
        for g in groups
    ]


def find_events(y: CorrelationSeries, params: DetectionParams, channel: str) -> list[EventRecord]:
    """Candidate runs above the lower threshold, merged, kept if the peak clears the event threshold.

    The returned start times sit at the filter peak; refine them with
    :func:`estimate_start_time`.
    """
    runs = kernels.supra_runs(np.ascontiguousarray(y.values, dtype=np.float64), params.candidate_threshold)
    groups = _groups_from_runs(y.offset, runs)
    return _to_records(_merge_and_threshold(groups, params, y.clock), channel, y.clock)


@dataclass
class ScanResult:
    channel: str
    candidates: list[EventRecord]
    n_cycles: int
    ones: int

    @property
    def error_density(self) -> float:
        return self.ones / max(1, self.n_cycles - 2)


def scan_stream(
    outcome_chunks: Iterable[np.ndarray], channel: str, clock: CycleClock, params: DetectionParams
) -> ScanResult:
    """Single pass over outcome chunks with O(kernel + chunk) memory."""
    corr = StreamingCorrelator(params.kernel_for(channel, clock))
    carry = np.zeros(0, dtype=np.uint8)
    groups: list[_Group] = []
    n_cycles = 0
    ones = 0
    for chunk in outcome_chunks:
        chunk = np.asarray(chunk, dtype=np.uint8)
        n_cycles += chunk.size
        buf = np.concatenate([carry, chunk])
        carry = buf[-2:].copy() if buf.size >= 2 else buf.copy()
        if buf.size < 3:
            continue
        bits = kernels.ggg(buf)
        ones += int(bits.sum())
        first, y = corr.feed(bits)
        if y.size:
            groups.extend(_groups_from_runs(first, kernels.supra_runs(y, params.candidate_threshold)))
    groups = _join_touching(groups)
    events = _to_records(_merge_and_threshold(groups, params, clock), channel, clock)
    return ScanResult(channel, events, n_cycles, ones)


def contrast_response(es: ErrorStream, kernel: ContrastKernel = ContrastKernel()) -> tuple[int, np.ndarray]:
    """(first index, v) with v[i] = ones in the h cycles from n minus ones in the h before, n = first + i."""
    h = kernel.half
    b = np.asarray(es.bits, dtype=np.int64)
    if b.size < 2 * h:
        return h, np.zeros(0, dtype=np.int64)
    cs = np.concatenate([[0], np.cumsum(b)])
    n = np.arange(h, b.size - h + 1)
    return h, (cs[n + h] - cs[n]) - (cs[n] - cs[n - h])


def estimate_start_time(es: ErrorStream, candidate: EventRecord, params: DetectionParams) -> tuple[int, bool]:
    """Start time (ns) where the ±Δt contrast response peaks near the candidate.

    Returns (start_ns, low_confidence); the earliest maximum wins ties and a
    non-positive maximum is flagged low-confidence.
    """
    clock = es.clock
    period = clock.cycle_period_ns
    half = ms(params.contrast_halfwidth_ms) // period
    hw = ms(params.start_search_halfwidth_ms) // period
    peak_cycle = candidate.extra.get("peak_cycle", candidate.start_ns // period)
    # only the neighbourhood of the candidate matters
    a = max(0, peak_cycle - hw - half - es.offset)
    b = max(a, min(len(es), peak_cycle + hw + half + 1 - es.offset))
    if a > 0 or b < len(es):
        es = ErrorStream(es.channel, es.bits[a:b], es.clock, es.offset + a)
    first, v = contrast_response(es, ContrastKernel(half))
    if v.size == 0:
        return int(peak_cycle) * period, True
    lo = max(0, peak_cycle - hw - es.offset - first)
    hi = min(v.size, peak_cycle + hw - es.offset - first + 1)
    if hi <= lo:
        lo, hi = (0, v.size) if peak_cycle - es.offset < first else (v.size - 1, v.size)
    i = lo + int(np.argmax(v[lo:hi]))
    low = bool(v[i] <= 0)
    return (es.offset + first + i) * period, low


def detect_trace(trace: QubitTrace, params: DetectionParams) -> list[EventRecord]:
    """In-memory detection: ggg, matched filter, thresholds, contrast start times."""
    es = match_template_ggg(trace)
    y = cross_correlate(es, params.kernel_for(trace.channel, trace.clock))
    out = []
    for cand in find_events(y, params, trace.channel):
        start_ns, low = estimate_start_time(es, cand, params)
        out.append(
            EventRecord(
                cand.channel,
                start_ns,
                EventSource.DETECTED,
                peak_height=cand.peak_height,
                low_confidence=low,
                extra=dict(cand.extra),
            )
        )
    return out
