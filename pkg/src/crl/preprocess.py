"""Raw g/e traces to ggg error streams and binned decay probabilities."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .model import CycleClock, NS_PER_S

DEFAULT_N_B = 100


@dataclass(frozen=True, eq=False)
class QubitTrace:
    """Per-cycle outcomes, 0 = g and 1 = e."""

    channel: str
    clock: CycleClock
    outcomes: np.ndarray

    @property
    def n_cycles(self) -> int:
        return int(self.outcomes.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QubitTrace):
            return NotImplemented
        return (
            self.channel == other.channel
            and self.clock == other.clock
            and np.array_equal(self.outcomes, other.outcomes)
        )


@dataclass(frozen=True, eq=False)
class ErrorStream:
    """bits[n] = 1 iff outcomes n, n+1, n+2 were all g.

    ``offset`` is the cycle index of bits[0] when the stream is a window
    cut out of a longer trace.
    """

    channel: str
    bits: np.ndarray
    clock: CycleClock = CycleClock()
    offset: int = 0

    def __len__(self) -> int:
        return int(self.bits.size)


@dataclass(frozen=True, eq=False)
class BinnedSeries:
    channel: str
    bin_cycles: int
    p_d: np.ndarray
    clock: CycleClock = CycleClock()
    offset: int = 0

    @property
    def counts(self) -> np.ndarray:
        return np.rint(self.p_d * (self.bin_cycles - 2)).astype(np.int64)

    def bin_start_times(self) -> np.ndarray:
        """Start time of each bin in seconds."""
        k = np.arange(self.p_d.size, dtype=np.float64)
        return (self.offset + k * self.bin_cycles) * self.clock.cycle_period_ns / NS_PER_S

    def bin_centers(self) -> np.ndarray:
        return self.bin_start_times() + 0.5 * self.bin_cycles * self.clock.dt_s

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["time_s", "p_d"])
            for t, p in zip(self.bin_start_times(), self.p_d):
                w.writerow([f"{t:.6f}", f"{p:.6f}"])


def match_template_ggg(trace: QubitTrace) -> ErrorStream:
    if trace.n_cycles < 3:
        raise ValueError(f"trace {trace.channel} has {trace.n_cycles} cycles; need at least 3")
    bits = kernels.ggg(np.ascontiguousarray(trace.outcomes, dtype=np.uint8))
    return ErrorStream(trace.channel, bits, trace.clock)


def bin_decay_probability(es: ErrorStream, n_b: int = DEFAULT_N_B) -> BinnedSeries:
    """Non-overlapping bins of ``n_b`` cycles, p_d = T / (n_b - 2).

    Only the n_b - 2 template positions whose three cycles lie inside a bin
    count toward it; the two windows straddling each seam are dropped and a
    trailing partial bin is discarded.
    """
    if n_b < 3:
        raise ValueError(f"N_b must be at least 3, got {n_b}")
    n_cycles = len(es) + 2
    n_bins = n_cycles // n_b
    if n_bins == 0:
        return BinnedSeries(es.channel, n_b, np.zeros(0), es.clock, es.offset)
    padded = np.zeros(n_bins * n_b, dtype=np.int64)
    m = min(len(es), n_bins * n_b)
    padded[:m] = es.bits[:m]
    T = padded.reshape(n_bins, n_b)[:, : n_b - 2].sum(axis=1)
    return BinnedSeries(es.channel, n_b, T / (n_b - 2), es.clock, es.offset)
