"""Device topology, channel parameters, cycle clock and event records.

All times are integer nanoseconds internally. Config-facing durations are
given in µs/ms and converted with the helpers below.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

NS_PER_US = 1_000
NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000

REGIONS = ("DB_A", "DB_B", "MB")
ROUTER_LABEL = "R∪Q2"


def us(x: float) -> int:
    return int(round(x * NS_PER_US))


def ms(x: float) -> int:
    return int(round(x * NS_PER_MS))


def seconds(x: float) -> int:
    return int(round(x * NS_PER_S))


def ns_to_s(t_ns: int) -> float:
    return t_ns / NS_PER_S


class ChannelKind(str, Enum):
    QUBIT = "qubit"
    ROUTER_PROBE = "router_probe"


class EventSource(str, Enum):
    GROUND_TRUTH = "ground_truth"
    DETECTED = "detected"


@dataclass(frozen=True)
class ChannelSpec:
    label: str
    region: str
    kind: ChannelKind = ChannelKind.QUBIT
    t1_base_us: float = 30.0
    f_g: float = 1.0
    f_e: float = 1.0
    tau_recovery_mean_ms: float = 3.0
    # Router probes read out through a qubit; its T1 and readout fidelities apply.
    linked_qubit: Optional[str] = None
    metadata: tuple[tuple[str, Any], ...] = ()

    def __post_init__(self) -> None:
        if not (0.0 < self.f_g <= 1.0 and 0.0 < self.f_e <= 1.0):
            raise ValueError(f"{self.label}: readout fidelities must lie in (0, 1]")
        if not self.t1_base_us > 0:
            raise ValueError(f"{self.label}: t1_base must be positive")
        if not self.tau_recovery_mean_ms > 0:
            raise ValueError(f"{self.label}: tau_recovery_mean must be positive")
        if self.kind is ChannelKind.ROUTER_PROBE and self.linked_qubit is None:
            raise ValueError(f"{self.label}: router probe needs a linked qubit")


@dataclass(frozen=True)
class Topology:
    channels: tuple[ChannelSpec, ...]
    regions: tuple[str, ...] = REGIONS

    def __post_init__(self) -> None:
        if not self.channels:
            raise ValueError("topology needs at least one channel")
        if len(set(self.regions)) != len(self.regions):
            raise ValueError("region labels must be unique")
        labels = [c.label for c in self.channels]
        if len(set(labels)) != len(labels):
            raise ValueError("channel labels must be unique")
        for c in self.channels:
            if c.region not in self.regions:
                raise ValueError(f"channel {c.label} references unknown region {c.region}")
            if c.linked_qubit is not None:
                linked = self.channel(c.linked_qubit)
                if linked.kind is not ChannelKind.QUBIT:
                    raise ValueError(f"{c.label}: linked channel must be a qubit")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(c.label for c in self.channels)

    def channel(self, label: str) -> ChannelSpec:
        for c in self.channels:
            if c.label == label:
                return c
        raise KeyError(f"unknown channel {label!r}")

    def residents(self, region: str) -> tuple[ChannelSpec, ...]:
        return tuple(c for c in self.channels if c.region == region)

    def qubits(self) -> tuple[ChannelSpec, ...]:
        return tuple(c for c in self.channels if c.kind is ChannelKind.QUBIT)


def paper_topology() -> Topology:
    """Q1 on daughterboard A, Q2 and Q4 on daughterboard B, router probe on the motherboard.

    Q3 is left out since it was not operational on the measured device.
    """
    return Topology(
        channels=(
            ChannelSpec("Q1", "DB_A", ChannelKind.QUBIT, 36.0, 0.997, 0.974, 3.7),
            ChannelSpec("Q2", "DB_B", ChannelKind.QUBIT, 41.4, 0.996, 0.982, 2.2),
            ChannelSpec("Q4", "DB_B", ChannelKind.QUBIT, 11.6, 0.988, 0.959, 6.2),
            ChannelSpec(
                ROUTER_LABEL,
                "MB",
                ChannelKind.ROUTER_PROBE,
                10.1,
                0.996,
                0.982,
                3.0,
                linked_qubit="Q2",
            ),
        )
    )


@dataclass(frozen=True)
class CycleClock:
    cycle_period_ns: int = 10_000
    t_idle_ns: int = 1_000

    def __post_init__(self) -> None:
        if not (self.cycle_period_ns > self.t_idle_ns > 0):
            raise ValueError("need cycle_period > t_idle > 0")

    @property
    def dt_s(self) -> float:
        return self.cycle_period_ns / NS_PER_S

    def cycles_in(self, duration_ns: int) -> int:
        return duration_ns // self.cycle_period_ns


def time_to_cycle(t_ns: int, clock: CycleClock) -> int:
    if t_ns < 0:
        raise ValueError(f"negative time {t_ns} ns")
    return int(t_ns) // clock.cycle_period_ns


def cycle_to_time(n: int, clock: CycleClock) -> int:
    return int(n) * clock.cycle_period_ns


@dataclass(frozen=True)
class EventRecord:
    channel: str
    start_ns: int
    source: EventSource = EventSource.GROUND_TRUTH
    gamma0: float = 0.0
    tau_ms: Optional[float] = None
    peak_height: Optional[float] = None
    # detected events only: contrast-estimate confidence and recovery fit uncertainty
    low_confidence: bool = False
    tau_sigma_ms: Optional[float] = None
    extra: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self) -> None:
        if self.gamma0 < 0:
            raise ValueError("gamma0 must be non-negative")
        if self.tau_ms is not None and not self.tau_ms > 0:
            raise ValueError("tau must be positive")
        detected = self.source is EventSource.DETECTED
        if detected != (self.peak_height is not None):
            raise ValueError("peak_height is present iff the event was detected")
        if not detected and self.tau_ms is None:
            raise ValueError("ground-truth events need a recovery constant")

    @property
    def start(self) -> float:
        return self.start_ns / NS_PER_S

    def to_dict(self) -> dict:
        d = {
            "channel": self.channel,
            "start_ns": int(self.start_ns),
            "start_s": self.start,
            "source": self.source.value,
            "gamma0": float(self.gamma0),
            "tau_ms": None if self.tau_ms is None else float(self.tau_ms),
            "peak_au": None if self.peak_height is None else float(self.peak_height),
        }
        if self.source is EventSource.DETECTED:
            d["low_confidence"] = bool(self.low_confidence)
            d["tau_sigma_ms"] = None if self.tau_sigma_ms is None else float(self.tau_sigma_ms)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EventRecord":
        if "start_ns" in d:
            start_ns = int(d["start_ns"])
        else:
            start_ns = seconds(float(d["start_s"]))
        return cls(
            channel=str(d["channel"]),
            start_ns=start_ns,
            source=EventSource(d.get("source", "ground_truth")),
            gamma0=float(d.get("gamma0") or 0.0),
            tau_ms=None if d.get("tau_ms") is None else float(d["tau_ms"]),
            peak_height=None if d.get("peak_au") is None else float(d["peak_au"]),
            low_confidence=bool(d.get("low_confidence", False)),
            tau_sigma_ms=None if d.get("tau_sigma_ms") is None else float(d["tau_sigma_ms"]),
        )


def finite_or_none(x: Optional[float]) -> Optional[float]:
    if x is None or not math.isfinite(x):
        return None
    return float(x)
