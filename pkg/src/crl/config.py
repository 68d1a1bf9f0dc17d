"""YAML run configuration with device defaults and strict key checking."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

import yaml

from .detect import DetectionParams
from .model import (
    NS_PER_S,
    ChannelKind,
    ChannelSpec,
    CycleClock,
    Topology,
    paper_topology,
    us,
)
from .simulator import BURST_MODELS, SimConfig, default_region_rate


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class StatsParams:
    window_ms: float = 1.0
    fit_span_ms: Optional[float] = None
    hist_bins: Optional[int] = None
    delay_bins: int = 40
    cdf_resamples: int = 1000
    match_window_ms: float = 5.0


@dataclass(frozen=True)
class RunConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    detect: DetectionParams = field(default_factory=DetectionParams)
    n_b: int = 100
    stats: StatsParams = field(default_factory=StatsParams)
    out_dir: str = "crl-out"
    chunk_cycles: int = 1 << 22


# YAML 1.1 resolves 1.0e7 (no exponent sign) to a string
_SCI = re.compile(r"[-+]?(\d+\.?\d*|\.\d+)[eE][-+]?\d+")


def _num(path: str, v: Any) -> float:
    if isinstance(v, str) and _SCI.fullmatch(v.strip()):
        v = float(v)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {v!r}")
    if not math.isfinite(v):
        raise ConfigError(f"{path}: must be finite")
    return float(v)


def _int(path: str, v: Any) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}: expected an integer, got {v!r}")
    return v


def _nonneg(path: str, v: Any) -> float:
    x = _num(path, v)
    if x < 0:
        raise ConfigError(f"{path}: must be non-negative, got {x}")
    return x


def _pos(path: str, v: Any) -> float:
    x = _num(path, v)
    if not x > 0:
        raise ConfigError(f"{path}: must be positive, got {x}")
    return x


def _prob(path: str, v: Any) -> float:
    x = _num(path, v)
    if not 0.0 <= x <= 1.0:
        raise ConfigError(f"{path}: probability must lie in [0, 1], got {x}")
    return x


def _fidelity(path: str, v: Any) -> float:
    x = _num(path, v)
    if not 0.0 < x <= 1.0:
        raise ConfigError(f"{path}: fidelity must lie in (0, 1], got {x}")
    return x


def _spread(path: str, v: Any) -> float:
    x = _num(path, v)
    if x < 1.0:
        raise ConfigError(f"{path}: spread factor must be >= 1, got {x}")
    return x


def _str(path: str, v: Any) -> str:
    if not isinstance(v, str):
        raise ConfigError(f"{path}: expected a string, got {v!r}")
    return v


def _section(path: str, raw: Any, allowed: set[str]) -> dict:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping")
    for k in raw:
        if k not in allowed:
            raise ConfigError(f"unknown key {path + '.' if path else ''}{k}")
    return raw


_SIM_KEYS = {
    "seed": _int,
    "duration_s": _nonneg,
    "cycle_period_us": _pos,
    "t_idle_us": _pos,
    "p_module_to_mb": _prob,
    "p_shower": _prob,
    "p_respond": _prob,
    "jitter_mean_us": _num,
    "jitter_sigma_us": _nonneg,
    "gamma0_median_hz": _nonneg,
    "gamma0_spread": _spread,
    "tau_spread": _spread,
    "burst_model": _str,
}
_CHANNEL_KEYS = {
    "region": _str,
    "kind": _str,
    "t1_base_us": _pos,
    "f_g": _fidelity,
    "f_e": _fidelity,
    "tau_recovery_mean_ms": _pos,
    "linked_qubit": _str,
}
# recorded only; never used in computation
_METADATA_KEYS = {"omega_q_ghz", "omega_rr_ghz", "t2_star_ns", "f_sqg"}

_DETECT_KEYS = {
    "default_tau_ms": _pos,
    "candidate_threshold": _pos,
    "event_threshold": _pos,
    "min_separation_ms": _nonneg,
    "start_search_halfwidth_ms": _nonneg,
    "window_ms": _pos,
    "pre_onset_ms": _pos,
    "contrast_halfwidth_ms": _pos,
}
_STATS_KEYS = {
    "window_ms": _pos,
    "fit_span_ms": _pos,
    "hist_bins": _int,
    "delay_bins": _int,
    "cdf_resamples": _int,
    "match_window_ms": _pos,
}


def _topology(raw: Any) -> Topology:
    sec = _section("sim.topology", raw, {"preset", "regions", "channels"})
    preset = _str("sim.topology.preset", sec.get("preset", "device"))
    if preset == "device":
        base = paper_topology()
    elif preset == "empty":
        base = None
    else:
        raise ConfigError(f"sim.topology.preset: unknown preset {preset!r}")
    regions = tuple(sec["regions"]) if "regions" in sec else (base.regions if base else ("DB_A", "DB_B", "MB"))
    channels = {c.label: c for c in base.channels} if base else {}
    chans_raw = sec.get("channels") or {}
    if not isinstance(chans_raw, dict):
        raise ConfigError("sim.topology.channels: expected a mapping")
    for label, craw in chans_raw.items():
        path = f"sim.topology.channels.{label}"
        c = _section(path, craw, set(_CHANNEL_KEYS) | {"metadata"})
        kw = {k: _CHANNEL_KEYS[k](f"{path}.{k}", v) for k, v in c.items() if k != "metadata"}
        if "kind" in kw:
            try:
                kw["kind"] = ChannelKind(kw["kind"])
            except ValueError:
                raise ConfigError(f"{path}.kind: must be 'qubit' or 'router_probe'") from None
        meta = _section(f"{path}.metadata", c.get("metadata"), _METADATA_KEYS)
        if meta:
            kw["metadata"] = tuple(sorted(meta.items()))
        if label in channels:
            channels[label] = replace(channels[label], **kw)
        else:
            if "region" not in kw:
                raise ConfigError(f"{path}.region: required for a new channel")
            channels[label] = ChannelSpec(label=label, **kw)
    try:
        return Topology(tuple(channels.values()), regions)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"sim.topology: {exc}") from None


def _sim(raw: Any) -> SimConfig:
    sec = _section("sim", raw, set(_SIM_KEYS) | {"topology", "region_rates_hz"})
    v = {k: _SIM_KEYS[k](f"sim.{k}", sec[k]) for k in _SIM_KEYS if k in sec}
    topo = _topology(sec.get("topology"))
    period = v.get("cycle_period_us", 10.0)
    idle = v.get("t_idle_us", 1.0)
    if not period > idle:
        raise ConfigError("sim.cycle_period_us: must exceed sim.t_idle_us")
    clock = CycleClock(us(period), us(idle))
    rates = None
    if "region_rates_hz" in sec:
        rr = _section("sim.region_rates_hz", sec["region_rates_hz"], set(topo.regions))
        lam = default_region_rate(v.get("p_respond", 0.9), v.get("p_shower", 0.02))
        defaults = {r: lam for r in topo.regions}
        rates = {**defaults, **{k: _nonneg(f"sim.region_rates_hz.{k}", x) for k, x in rr.items()}}
    model = v.get("burst_model", "template")
    if model not in BURST_MODELS:
        raise ConfigError(f"sim.burst_model: must be one of {BURST_MODELS}")
    try:
        return SimConfig(
            topology=topo,
            clock=clock,
            duration_ns=int(round(v.get("duration_s", 1800.0) * NS_PER_S)),
            region_rates=rates,
            p_module_to_mb=v.get("p_module_to_mb", 0.4),
            p_shower=v.get("p_shower", 0.02),
            p_respond=v.get("p_respond", 0.9),
            jitter_mean_us=v.get("jitter_mean_us", -35.0),
            jitter_sigma_us=v.get("jitter_sigma_us", 121.0),
            gamma0_median=v.get("gamma0_median_hz", 1e7),
            gamma0_spread=v.get("gamma0_spread", 2.0),
            tau_spread=v.get("tau_spread", 1.5),
            seed=v.get("seed", 0),
            burst_model=model,
        )
    except ValueError as exc:
        raise ConfigError(f"sim: {exc}") from None


def _detect(raw: Any, topo: Topology) -> DetectionParams:
    sec = _section("detect", raw, set(_DETECT_KEYS) | {"tau_ms"})
    v = {k: _DETECT_KEYS[k](f"detect.{k}", sec[k]) for k in _DETECT_KEYS if k in sec}
    taus = dict(DetectionParams().tau_per_channel)
    for label, x in (sec.get("tau_ms") or {}).items():
        if label not in topo.labels:
            raise ConfigError(f"detect.tau_ms.{label}: channel not in topology")
        taus[label] = _pos(f"detect.tau_ms.{label}", x)
    taus = {k: t for k, t in taus.items() if k in topo.labels}
    try:
        return DetectionParams(tau_per_channel=taus, **v)
    except ValueError as exc:
        raise ConfigError(f"detect: {exc}") from None


def config_from_dict(raw: Optional[dict]) -> RunConfig:
    top = _section("", raw, {"sim", "detect", "preprocess", "stats", "output", "chunk_cycles"})
    sim = _sim(top.get("sim"))
    det = _detect(top.get("detect"), sim.topology)
    pre = _section("preprocess", top.get("preprocess"), {"n_b"})
    n_b = _int("preprocess.n_b", pre.get("n_b", 100))
    if n_b < 3:
        raise ConfigError("preprocess.n_b: must be at least 3")
    st_raw = _section("stats", top.get("stats"), set(_STATS_KEYS))
    st = StatsParams(**{k: _STATS_KEYS[k](f"stats.{k}", x) for k, x in st_raw.items()})
    for k in ("hist_bins", "delay_bins", "cdf_resamples"):
        x = getattr(st, k)
        if x is not None and x < 1:
            raise ConfigError(f"stats.{k}: must be at least 1")
    out = _section("output", top.get("output"), {"dir"})
    chunk = _int("chunk_cycles", top.get("chunk_cycles", 1 << 22))
    if chunk < 8:
        raise ConfigError("chunk_cycles: must be at least 8")
    return RunConfig(sim, det, n_b, st, _str("output.dir", out.get("dir", "crl-out")), chunk)


def parse_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    return config_from_dict(raw)
