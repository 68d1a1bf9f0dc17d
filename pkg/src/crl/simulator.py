"""Ground-truth burst generation and per-channel measurement bit-streams.

Impacts arrive per region as homogeneous Poisson processes. A daughterboard
impact may co-trigger the motherboard and the other daughterboard(s); each
hit region then excites its resident channels. A burst raises the channel's
decay rate for a few ms, and every measurement cycle is an independent
Bernoulli draw given that transient.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .model import (
    NS_PER_MS,
    NS_PER_S,
    NS_PER_US,
    ChannelKind,
    ChannelSpec,
    CycleClock,
    EventRecord,
    EventSource,
    Topology,
    paper_topology,
)
from .preprocess import QubitTrace

MEAN_EVENT_INTERVAL_S = 144.0
BURST_MODELS = ("template", "rate")
DEFAULT_CHUNK = 1 << 22


def default_region_rate(p_respond: float = 0.9, p_shower: float = 0.02) -> float:
    """Per-region impact rate giving each qubit one event per 144 s on average."""
    return 1.0 / (MEAN_EVENT_INTERVAL_S * p_respond * (1.0 + p_shower))


@dataclass(frozen=True)
class SimConfig:
    topology: Topology = field(default_factory=paper_topology)
    clock: CycleClock = field(default_factory=CycleClock)
    duration_ns: int = 1800 * NS_PER_S
    region_rates: Optional[dict] = None
    p_module_to_mb: float = 0.4
    p_shower: float = 0.02
    p_respond: float = 0.9
    jitter_mean_us: float = -35.0
    jitter_sigma_us: float = 121.0
    gamma0_median: float = 1e7
    gamma0_spread: float = 2.0
    tau_spread: float = 1.5
    seed: int = 0
    burst_model: str = "template"

    def __post_init__(self) -> None:
        for name in ("p_module_to_mb", "p_shower", "p_respond"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.duration_ns < 0:
            raise ValueError("duration must be non-negative")
        if self.gamma0_spread < 1 or self.tau_spread < 1:
            raise ValueError("log-normal spreads must be >= 1")
        if self.gamma0_median < 0 or self.jitter_sigma_us < 0:
            raise ValueError("gamma0_median and jitter_sigma must be non-negative")
        if self.burst_model not in BURST_MODELS:
            raise ValueError(f"burst_model must be one of {BURST_MODELS}")
        rates = self.rates()
        for region, r in rates.items():
            if region not in self.topology.regions:
                raise ValueError(f"rate given for unknown region {region!r}")
            if r < 0:
                raise ValueError(f"rate for {region} must be non-negative")

    def rates(self) -> dict:
        if self.region_rates is not None:
            return dict(self.region_rates)
        lam = default_region_rate(self.p_respond, self.p_shower)
        return {r: lam for r in self.topology.regions}

    @property
    def n_cycles(self) -> int:
        return self.clock.cycles_in(self.duration_ns)


@dataclass(frozen=True)
class GroundTruth:
    events: tuple[EventRecord, ...]
    impacts: dict
    config: SimConfig

    def for_channel(self, label: str) -> tuple[EventRecord, ...]:
        return tuple(e for e in self.events if e.channel == label)


def _seed_sequence(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=key)


def channel_rng(seed: int, label: str) -> np.random.Generator:
    """Counter-based substream owned by one channel."""
    return np.random.Generator(np.random.Philox(_seed_sequence(seed, 1, zlib.crc32(label.encode()))))


def generate_events(cfg: SimConfig) -> GroundTruth:
    topo = cfg.topology
    T = cfg.duration_ns
    rates = cfg.rates()
    rng = np.random.Generator(np.random.Philox(_seed_sequence(cfg.seed, 0)))
    if T == 0:
        return GroundTruth((), {r: np.zeros(0, dtype=np.int64) for r in topo.regions}, cfg)

    origins = []
    for ri, region in enumerate(topo.regions):
        n = rng.poisson(rates.get(region, 0.0) * T / NS_PER_S)
        times = np.sort(rng.integers(0, T, size=n, dtype=np.int64))
        origins.extend((int(t), ri) for t in times)
    origins.sort()

    daughterboards = [r for r in topo.regions if r.startswith("DB")]
    sig_g = math.log(cfg.gamma0_spread)
    sig_t = math.log(cfg.tau_spread)
    reference = {}
    for region in topo.regions:
        res = topo.residents(region)
        reference[region] = res[0].label if res else None

    hits = {r: [] for r in topo.regions}
    events = []
    for t_imp, ri in origins:
        origin = topo.regions[ri]
        hit = [origin]
        if origin in daughterboards:
            u_mb, *u_db = rng.random(1 + len(daughterboards))
            if "MB" in topo.regions and u_mb < cfg.p_module_to_mb:
                hit.append("MB")
            for db, u in zip(daughterboards, u_db):
                if db != origin and u < cfg.p_shower:
                    hit.append(db)
        for region in topo.regions:
            if region not in hit:
                continue
            hits[region].append(t_imp)
            for ch in topo.residents(region):
                u, z_jit, z_g, z_t = rng.random(), *rng.standard_normal(3)
                responds = ch.kind is ChannelKind.ROUTER_PROBE or u < cfg.p_respond
                if not responds:
                    continue
                jitter = 0.0
                if ch.label != reference[region]:
                    jitter = cfg.jitter_mean_us + cfg.jitter_sigma_us * z_jit
                start = t_imp + int(round(jitter * NS_PER_US))
                if not 0 <= start < T:
                    continue
                gamma0 = cfg.gamma0_median * math.exp(sig_g * z_g)
                # log-normal with its mean (not median) at the channel's recovery time
                tau = ch.tau_recovery_mean_ms * math.exp(sig_t * z_t - 0.5 * sig_t**2)
                events.append(EventRecord(ch.label, start, EventSource.GROUND_TRUTH, gamma0, tau))

    events.sort(key=lambda e: (e.start_ns, topo.labels.index(e.channel)))
    impacts = {r: np.asarray(v, dtype=np.int64) for r, v in hits.items()}
    return GroundTruth(tuple(events), impacts, cfg)


@dataclass(frozen=True)
class _TraceModel:
    """Everything needed to turn bursts into per-cycle g probabilities."""

    survival_base: float
    f_g: float
    f_e: float
    base_rate: float
    event_channels: tuple[str, ...]

    @property
    def contrast(self) -> float:
        return self.survival_base * (self.f_g + self.f_e - 1.0)

    @property
    def p_g_base(self) -> float:
        return self.f_g - self.contrast


def _trace_model(topo: Topology, clock: CycleClock, label: str) -> _TraceModel:
    ch = topo.channel(label)
    t_idle_s = clock.t_idle_ns / NS_PER_S
    rate = 1.0 / (ch.t1_base_us * 1e-6)
    if ch.kind is ChannelKind.ROUTER_PROBE:
        q: ChannelSpec = topo.channel(ch.linked_qubit)
        rate += 1.0 / (q.t1_base_us * 1e-6)
        return _TraceModel(math.exp(-t_idle_s * rate), q.f_g, q.f_e, rate, (q.label, label))
    return _TraceModel(math.exp(-t_idle_s * rate), ch.f_g, ch.f_e, rate, (label,))


def _excess_decay(ev: EventRecord, dt_s: np.ndarray, tm: _TraceModel, t_idle_s: float, model: str) -> np.ndarray:
    """Probability that the burst alone relaxes the excitation during the idle window."""
    tau_s = ev.tau_ms * 1e-3
    if model == "rate":
        return -np.expm1(-ev.gamma0 * np.exp(-dt_s / tau_s) * t_idle_s)
    # template model: choose the excess so that P(g)**3, the ggg hit
    # probability, relaxes as a single exponential with time constant tau
    b, kappa = tm.p_g_base, tm.contrast
    if kappa <= 0:
        raise ValueError("template burst model needs f_g + f_e > 1")
    q0 = -math.expm1(-ev.gamma0 * t_idle_s)
    p_on = b + kappa * q0
    p_g = np.cbrt(b**3 + (p_on**3 - b**3) * np.exp(-dt_s / tau_s))
    return np.clip((p_g - b) / kappa, 0.0, 1.0 - 1e-16)


def _influence_ns(ev: EventRecord, t_idle_s: float) -> int:
    tau_ns = ev.tau_ms * NS_PER_MS
    return int(tau_ns * (40.0 + math.log(max(1.0, ev.gamma0 * t_idle_s))))


def _relevant_events(gt: GroundTruth, tm: _TraceModel) -> list:
    return [e for e in gt.events if e.channel in tm.event_channels]


def effective_decay_rate(t_ns: int, channel: str, gt: GroundTruth) -> float:
    """Instantaneous decay rate (1/s) of ``channel`` including all bursts begun by ``t_ns``.

    For the router probe this is the combined rate of the router and its
    ancilla qubit.
    """
    cfg = gt.config
    tm = _trace_model(cfg.topology, cfg.clock, channel)
    t_idle_s = cfg.clock.t_idle_ns / NS_PER_S
    total = tm.base_rate
    for ev in _relevant_events(gt, tm):
        if ev.start_ns > t_ns:
            continue
        dt_s = (t_ns - ev.start_ns) / NS_PER_S
        if cfg.burst_model == "rate":
            total += ev.gamma0 * math.exp(-dt_s / (ev.tau_ms * 1e-3))
        else:
            q = float(_excess_decay(ev, np.array([dt_s]), tm, t_idle_s, "template")[0])
            total += -math.log1p(-q) / t_idle_s
    return total


def g_probability(gt: GroundTruth, channel: str, start: int, stop: int) -> np.ndarray:
    """Probability of recording g in cycles [start, stop)."""
    cfg = gt.config
    clock = cfg.clock
    tm = _trace_model(cfg.topology, clock, channel)
    return _g_probability(tm, _relevant_events(gt, tm), clock, cfg.burst_model, start, stop)


def _g_probability(tm, events, clock: CycleClock, model: str, start: int, stop: int) -> np.ndarray:
    n = stop - start
    t_idle_s = clock.t_idle_ns / NS_PER_S
    period = clock.cycle_period_ns
    # decay rate sampled at the midpoint of each cycle's idle window
    half_idle = clock.t_idle_ns // 2
    log_surv = None
    t0 = start * period + half_idle
    t1 = (stop - 1) * period + half_idle
    for ev in events:
        if ev.start_ns > t1 or ev.start_ns + _influence_ns(ev, t_idle_s) < t0:
            continue
        first = max(start, -(-(ev.start_ns - half_idle) // period))
        last = min(stop, (ev.start_ns + _influence_ns(ev, t_idle_s) - half_idle) // period + 1)
        if last <= first:
            continue
        cyc = np.arange(first, last, dtype=np.int64)
        dt_s = (cyc * period + half_idle - ev.start_ns) / NS_PER_S
        q = _excess_decay(ev, dt_s, tm, t_idle_s, model)
        if log_surv is None:
            log_surv = np.zeros(n)
        log_surv[first - start : last - start] += np.log1p(-q)
    F = tm.f_g + tm.f_e - 1.0
    if log_surv is None:
        return np.full(n, tm.p_g_base)
    p_e = tm.survival_base * np.exp(log_surv)
    return tm.f_g - p_e * F


def iter_trace_chunks(gt: GroundTruth, channel: str, chunk_cycles: int = DEFAULT_CHUNK) -> Iterator[np.ndarray]:
    """Outcome chunks (uint8, 1 = e) for one channel; identical for any chunk size."""
    cfg = gt.config
    clock = cfg.clock
    tm = _trace_model(cfg.topology, clock, channel)
    events = _relevant_events(gt, tm)
    rng = channel_rng(cfg.seed, channel)
    n_total = cfg.n_cycles
    for start in range(0, n_total, chunk_cycles):
        stop = min(n_total, start + chunk_cycles)
        p_g = _g_probability(tm, events, clock, cfg.burst_model, start, stop)
        u = rng.random(stop - start)
        yield (u >= p_g).astype(np.uint8)


def simulate_trace(cfg: SimConfig, gt: GroundTruth, channel: str, chunk_cycles: int = DEFAULT_CHUNK) -> QubitTrace:
    if gt.config != cfg:
        gt = GroundTruth(gt.events, gt.impacts, cfg)
    cfg.topology.channel(channel)
    chunks = list(iter_trace_chunks(gt, channel, chunk_cycles))
    outcomes = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.uint8)
    return QubitTrace(channel, cfg.clock, outcomes)


def router_probe(topo: Topology) -> ChannelSpec:
    for c in topo.channels:
        if c.kind is ChannelKind.ROUTER_PROBE:
            return c
    raise ValueError("topology has no router probe channel")


def simulate_router_trace(cfg: SimConfig, gt: GroundTruth, chunk_cycles: int = DEFAULT_CHUNK) -> QubitTrace:
    """Trace of the swap sequence: excitation survives in both the router and its ancilla."""
    return simulate_trace(cfg, gt, router_probe(cfg.topology).label, chunk_cycles)
