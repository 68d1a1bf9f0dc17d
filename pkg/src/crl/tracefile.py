"""Bit-packed trace files.

Layout (little-endian): ``b"CRLT"``, u8 version (1), u16 channel count,
u32 cycle period in ns, u64 cycle count, then one u16-length-prefixed UTF-8
label per channel. The payload is channel-major, one bit per cycle packed
least-significant bit first (1 = e), each channel padded to a whole byte.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .model import CycleClock
from .preprocess import QubitTrace

MAGIC = b"CRLT"
VERSION = 1
_FIXED = struct.Struct("<4sBHIQ")
_LABEL_LEN = struct.Struct("<H")


class TraceFormatError(Exception):
    pass


class BadMagicError(TraceFormatError):
    pass


class UnsupportedVersionError(TraceFormatError):
    pass


class TruncatedPayloadError(TraceFormatError):
    pass


def pack_outcomes(outcomes: np.ndarray) -> bytes:
    return np.packbits(np.asarray(outcomes, dtype=np.uint8), bitorder="little").tobytes()


def unpack_outcomes(data: bytes, n_cycles: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=n_cycles, bitorder="little")


def _header_bytes(labels: Sequence[str], cycle_ns: int, n_cycles: int) -> bytes:
    parts = [_FIXED.pack(MAGIC, VERSION, len(labels), cycle_ns, n_cycles)]
    for label in labels:
        raw = label.encode("utf-8")
        parts.append(_LABEL_LEN.pack(len(raw)) + raw)
    return b"".join(parts)


class TraceWriter:
    """Streams channels one after another; chunk sizes are arbitrary."""

    def __init__(self, path: str | Path, labels: Sequence[str], clock: CycleClock, n_cycles: int):
        if not labels:
            raise ValueError("need at least one channel")
        if len(set(labels)) != len(labels):
            raise ValueError("channel labels must be unique")
        self.labels = list(labels)
        self.n_cycles = int(n_cycles)
        self._fh = open(path, "wb")
        self._fh.write(_header_bytes(self.labels, clock.cycle_period_ns, self.n_cycles))
        self._next = 0

    def write_channel(self, chunks: Iterable[np.ndarray]) -> None:
        if self._next >= len(self.labels):
            raise ValueError("all channels already written")
        pending = np.zeros(0, dtype=np.uint8)
        written = 0
        for chunk in chunks:
            chunk = np.asarray(chunk, dtype=np.uint8)
            buf = np.concatenate([pending, chunk]) if pending.size else chunk
            whole = buf.size - buf.size % 8
            if whole:
                self._fh.write(pack_outcomes(buf[:whole]))
            pending = buf[whole:].copy()
            written += chunk.size
        if written != self.n_cycles:
            raise ValueError(f"channel {self.labels[self._next]} has {written} cycles, header says {self.n_cycles}")
        if pending.size:
            self._fh.write(pack_outcomes(pending))
        self._next += 1

    def close(self) -> None:
        self._fh.close()
        if self._next != len(self.labels):
            raise ValueError(f"only {self._next} of {len(self.labels)} channels written")

    def __enter__(self) -> "TraceWriter":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is None:
            self.close()
        else:
            self._fh.close()


def write_traces(path: str | Path, traces: Sequence[QubitTrace]) -> None:
    if not traces:
        raise ValueError("need at least one trace")
    n = traces[0].n_cycles
    clock = traces[0].clock
    for t in traces:
        if t.n_cycles != n:
            raise ValueError("all traces must have the same number of cycles")
        if t.clock.cycle_period_ns != clock.cycle_period_ns:
            raise ValueError("all traces must share one cycle period")
    with TraceWriter(path, [t.channel for t in traces], clock, n) as w:
        for t in traces:
            w.write_channel([t.outcomes])


class TraceReader:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        with open(self.path, "rb") as fh:
            head = fh.read(_FIXED.size)
            if len(head) < 4 or head[:4] != MAGIC:
                raise BadMagicError(f"{path}: not a trace file (magic {head[:4]!r})")
            if len(head) < _FIXED.size:
                raise TruncatedPayloadError(f"{path}: header truncated")
            _, version, n_channels, cycle_ns, n_cycles = _FIXED.unpack(head)
            if version != VERSION:
                raise UnsupportedVersionError(f"{path}: version {version} not supported")
            if n_channels < 1:
                raise TraceFormatError(f"{path}: no channels")
            labels = []
            for _ in range(n_channels):
                raw = fh.read(_LABEL_LEN.size)
                if len(raw) < _LABEL_LEN.size:
                    raise TruncatedPayloadError(f"{path}: label table truncated")
                (ln,) = _LABEL_LEN.unpack(raw)
                lab = fh.read(ln)
                if len(lab) < ln:
                    raise TruncatedPayloadError(f"{path}: label table truncated")
                labels.append(lab.decode("utf-8"))
            self.payload_start = fh.tell()
        self.labels = labels
        self.n_cycles = n_cycles
        self.clock = CycleClock(cycle_ns, min(1000, cycle_ns - 1)) if cycle_ns > 1 else CycleClock(2, 1)
        self.bytes_per_channel = (n_cycles + 7) // 8
        need = self.payload_start + n_channels * self.bytes_per_channel
        size = self.path.stat().st_size
        if size < need:
            raise TruncatedPayloadError(f"{path}: payload has {size - self.payload_start} bytes, need {need - self.payload_start}")

    def _base(self, label: str) -> int:
        try:
            i = self.labels.index(label)
        except ValueError:
            raise KeyError(f"channel {label!r} not in {self.path}") from None
        return self.payload_start + i * self.bytes_per_channel

    def read_window(self, label: str, start: int, stop: int) -> np.ndarray:
        """Outcomes for cycles [start, stop), clipped to the trace."""
        start = max(0, int(start))
        stop = min(self.n_cycles, int(stop))
        if stop <= start:
            return np.zeros(0, dtype=np.uint8)
        b0 = start // 8
        b1 = (stop + 7) // 8
        with open(self.path, "rb") as fh:
            fh.seek(self._base(label) + b0)
            data = fh.read(b1 - b0)
        bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
        return bits[start - 8 * b0 : stop - 8 * b0]

    def iter_channel(self, label: str, chunk_cycles: int = 1 << 23) -> Iterator[np.ndarray]:
        chunk_cycles -= chunk_cycles % 8
        chunk_cycles = max(8, chunk_cycles)
        base = self._base(label)
        with open(self.path, "rb") as fh:
            fh.seek(base)
            done = 0
            while done < self.n_cycles:
                n = min(chunk_cycles, self.n_cycles - done)
                data = fh.read((n + 7) // 8)
                yield np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=n, bitorder="little")
                done += n

    def read(self, label: str) -> QubitTrace:
        return QubitTrace(label, self.clock, self.read_window(label, 0, self.n_cycles))


def read_traces(path: str | Path) -> list[QubitTrace]:
    r = TraceReader(path)
    return [r.read(label) for label in r.labels]
