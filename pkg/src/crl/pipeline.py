"""Stage orchestration behind the ``crl`` subcommands.

Traces stay on disk: detection streams them chunk by chunk and only reads
short windows back around each candidate.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .config import RunConfig
from .detect import estimate_start_time, scan_stream
from .model import (
    NS_PER_S,
    ChannelKind,
    EventRecord,
    EventSource,
    finite_or_none,
    ms,
)
from .preprocess import ErrorStream, bin_decay_probability
from .simulator import GroundTruth, generate_events, iter_trace_chunks
from .stats import (
    RecoveryFit,
    _greedy_match,
    chance_coincidence,
    coincidence_matrix,
    delay_histogram,
    fit_recovery,
    interarrival_stats,
    recovery_cdf,
)
from .tracefile import TraceReader, TraceWriter

log = logging.getLogger("crl")

TRACE_FILE = "traces.crlt"
GROUND_TRUTH_FILE = "ground_truth.json"
EVENTS_FILE = "events.json"
REPORT_FILE = "report.json"
SUMMARY_FILE = "summary.json"


@dataclass
class StageResult:
    artifacts: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", label).strip("_") or "ch"


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(x: Optional[float], nd: int = 9) -> str:
    return "" if x is None or not math.isfinite(x) else f"{x:.{nd}g}"


def events_document(events: list[EventRecord], channels, n_cycles: int, cycle_ns: int, source: str, **extra) -> dict:
    doc = {
        "schema": "crl-events/1",
        "source": source,
        "channels": list(channels),
        "n_cycles": int(n_cycles),
        "cycle_ns": int(cycle_ns),
        "duration_s": n_cycles * cycle_ns / NS_PER_S,
        "events": [e.to_dict() for e in events],
    }
    doc.update(extra)
    return doc


def load_events(path: str | Path) -> tuple[dict, list[EventRecord]]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict) or "events" not in doc:
        raise ValueError(f"{path}: not an event list")
    return doc, [EventRecord.from_dict(d) for d in doc["events"]]


# --- simulate -----------------------------------------------------------------


def simulate(cfg: RunConfig, out: Path) -> tuple[GroundTruth, StageResult]:
    out.mkdir(parents=True, exist_ok=True)
    sim = cfg.sim
    gt = generate_events(sim)
    labels = list(sim.topology.labels)
    trace_path = out / TRACE_FILE
    with TraceWriter(trace_path, labels, sim.clock, sim.n_cycles) as w:
        for label in labels:
            w.write_channel(iter_trace_chunks(gt, label, cfg.chunk_cycles))
    gt_path = out / GROUND_TRUTH_FILE
    doc = events_document(
        list(gt.events),
        labels,
        sim.n_cycles,
        sim.clock.cycle_period_ns,
        "ground_truth",
        seed=int(sim.seed),
        impacts_ns={r: [int(t) for t in v] for r, v in gt.impacts.items()},
    )
    _dump_json(gt_path, doc)
    res = StageResult({"traces": str(trace_path), "ground_truth": str(gt_path)})
    res.summary = {"n_events": len(gt.events), "n_cycles": sim.n_cycles, "channels": labels}
    return gt, res


# --- detect -------------------------------------------------------------------


def _fit_event(reader: TraceReader, label: str, start_ns: int, next_ns: Optional[int], cfg: RunConfig) -> Optional[RecoveryFit]:
    period = reader.clock.cycle_period_ns
    n_b = cfg.n_b
    tau_guess = cfg.detect.tau_ms(label) * 1e-3
    span = cfg.stats.fit_span_ms * 1e-3 if cfg.stats.fit_span_ms else max(10 * tau_guess, 50e-3)
    if next_ns is not None:
        # keep the next burst on this channel out of the fit
        span = min(span, (next_ns - start_ns) / NS_PER_S - cfg.detect.pre_onset_ms * 1e-3)
    if span <= 0:
        return None
    c0 = (start_ns // period) // n_b * n_b
    c1 = (start_ns + int(span * NS_PER_S)) // period + n_b + 2
    outcomes = reader.read_window(label, c0, c1)
    if outcomes.size < 3:
        return None
    es = ErrorStream(label, kernels.ggg(outcomes), reader.clock, c0)
    bs = bin_decay_probability(es, n_b)
    try:
        return fit_recovery(bs, start_ns / NS_PER_S, fit_span=span, tau_guess=tau_guess)
    except ValueError:
        return None


def detect_file(trace_path: Path, cfg: RunConfig) -> tuple[list[EventRecord], StageResult]:
    reader = TraceReader(trace_path)
    params = cfg.detect
    period = reader.clock.cycle_period_ns
    res = StageResult()
    events: list[EventRecord] = []
    for label in reader.labels:
        scan = scan_stream(reader.iter_channel(label, cfg.chunk_cycles), label, reader.clock, params)
        if scan.error_density > 0.5:
            res.warnings.append(
                f"{label}: error stream saturated ({scan.error_density:.2f} template hits per cycle); "
                "zero-sum filter output is flat, no events can be resolved"
            )
        hw = ms(params.start_search_halfwidth_ms) // period
        half = ms(params.contrast_halfwidth_ms) // period
        refined = []
        for cand in scan.candidates:
            pc = cand.extra["peak_cycle"]
            a = max(0, pc - hw - half - 2)
            outcomes = reader.read_window(label, a, pc + hw + half + 3)
            es = ErrorStream(label, kernels.ggg(outcomes), reader.clock, a)
            start_ns, low = estimate_start_time(es, cand, params)
            refined.append((start_ns, low, cand))
        refined.sort(key=lambda x: x[0])
        for i, (start_ns, low, cand) in enumerate(refined):
            nxt = refined[i + 1][0] if i + 1 < len(refined) else None
            fit = _fit_event(reader, label, start_ns, nxt, cfg)
            tau_ms = tau_sig = None
            if fit is not None and fit.converged:
                tau_ms = fit.tau_hat * 1e3
                tau_sig = finite_or_none(fit.tau_sigma * 1e3 if fit.tau_sigma is not None else None)
            events.append(
                EventRecord(
                    label,
                    start_ns,
                    EventSource.DETECTED,
                    tau_ms=tau_ms,
                    peak_height=cand.peak_height,
                    low_confidence=low,
                    tau_sigma_ms=tau_sig,
                    extra={"peak_cycle": cand.extra["peak_cycle"]},
                )
            )
        res.summary[label] = {"n_events": len(refined), "error_density": scan.error_density}
    order = {lab: i for i, lab in enumerate(reader.labels)}
    events.sort(key=lambda e: (order[e.channel], e.start_ns))
    res.summary["n_cycles"] = reader.n_cycles
    res.summary["channels"] = list(reader.labels)
    res.summary["cycle_ns"] = period
    return events, res


def write_detections(events: list[EventRecord], res: StageResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    doc = events_document(
        events, res.summary["channels"], res.summary["n_cycles"], res.summary["cycle_ns"], "detected"
    )
    _dump_json(out / EVENTS_FILE, doc)
    _write_csv(
        out / "events.csv",
        ["channel", "start_s", "peak_au", "tau_ms"],
        [[e.channel, f"{e.start:.6f}", _fmt(e.peak_height, 6), _fmt(e.tau_ms, 6)] for e in events],
    )
    res.artifacts["events"] = str(out / EVENTS_FILE)
    res.artifacts["events_csv"] = str(out / "events.csv")


# --- stats --------------------------------------------------------------------


def _fits_from_events(events: list[EventRecord]) -> list[RecoveryFit]:
    return [
        RecoveryFit(e.channel, e.start, e.tau_ms * 1e-3, (e.tau_sigma_ms or 0.0) * 1e-3, 1.0, 0.0, True)
        for e in events
        if e.tau_ms is not None
    ]


def compute_stats(doc: dict, events: list[EventRecord], cfg: RunConfig) -> tuple[dict, dict, list]:
    """Returns (json report, csv tables name -> (header, rows), warnings)."""
    channels = list(doc.get("channels") or sorted({e.channel for e in events}))
    warnings = []
    if not events:
        warnings.append("event list is empty; tables are empty")
    by_ch = {c: sorted((e for e in events if e.channel == c), key=lambda e: e.start_ns) for c in channels}
    window = cfg.stats.window_ms * 1e-3
    rep = coincidence_matrix(by_ch, window)
    tables = {
        "coincidence_counts": (["row"] + channels, [[r] + [int(x) for x in rep.counts[i]] for i, r in enumerate(channels)]),
        "coincidence_conditional": (
            ["row"] + channels,
            [[r] + [f"{x:.6f}" for x in rep.conditional[i]] for i, r in enumerate(channels)],
        ),
    }
    report = {
        "channels": channels,
        "window_s": window,
        "counts": rep.counts.tolist(),
        "conditional": [[round(float(x), 12) for x in row] for row in rep.conditional],
        "delays": {},
        "intervals": {},
        "recovery": {},
    }
    for i, a in enumerate(channels):
        for b in channels[i + 1 :]:
            h = delay_histogram(rep, (b, a), n_bins=cfg.stats.delay_bins)
            key = f"{b}-{a}"
            report["delays"][key] = {"n": h.n, "mean_s": h.mean, "sigma_s": h.sigma}
            tables[f"delays_{slug(b)}_{slug(a)}"] = (
                ["bin_lo_s", "bin_hi_s", "count"],
                [[f"{lo:.6g}", f"{hi:.6g}", int(c)] for lo, hi, c in zip(h.edges[:-1], h.edges[1:], h.counts)],
            )
    duration = float(doc.get("duration_s") or 0.0)
    for c in channels:
        evs = by_ch[c]
        entry: dict = {"n_events": len(evs)}
        if len(evs) >= 2:
            st = interarrival_stats(evs, cfg.stats.hist_bins)
            entry.update(lambda_hat_hz=st.lambda_hat, lambda_sigma_hz=st.lambda_sigma, gof_pvalue=st.gof_pvalue)
            tables[f"intervals_{slug(c)}"] = (
                ["bin_lo_s", "bin_hi_s", "count"],
                [[f"{lo:.6g}", f"{hi:.6g}", int(n)] for lo, hi, n in zip(st.edges[:-1], st.edges[1:], st.histogram)],
            )
        if duration > 0:
            entry["rate_hz"] = len(evs) / duration
        report["intervals"][c] = entry
        fits = _fits_from_events(evs)
        if fits:
            cdf = recovery_cdf(fits, cfg.stats.cdf_resamples, seed=0)
            report["recovery"][c] = {"n": cdf.n, "mean_tau_ms": cdf.mean_tau * 1e3, "sem_tau_ms": cdf.sem_tau * 1e3}
            tables[f"recovery_cdf_{slug(c)}"] = (
                ["tau_ms", "cdf", "lower", "upper"],
                [
                    [f"{g * 1e3:.6g}", f"{p:.6f}", f"{lo:.6f}", f"{hi:.6f}"]
                    for g, p, lo, hi in zip(cdf.grid, cdf.cdf, cdf.lower, cdf.upper)
                ],
            )
    qubit_rates = [report["intervals"][c].get("lambda_hat_hz") for c in channels]
    qubit_rates = [r for r in qubit_rates if r]
    if qubit_rates and duration > 0:
        lam = float(np.mean(qubit_rates))
        p, expected = chance_coincidence(lam, window, duration / window)
        report["chance_coincidence"] = {"lambda_hz": lam, "probability": p, "expected_count": expected}
    return report, tables, warnings


def write_stats(report: dict, tables: dict, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    arts = {}
    _dump_json(out / REPORT_FILE, report)
    arts["report"] = str(out / REPORT_FILE)
    for name, (header, rows) in tables.items():
        p = out / f"{name}.csv"
        _write_csv(p, header, rows)
        arts[name] = str(p)
    return arts


# --- report -------------------------------------------------------------------


def figure_tables(trace_path: Path, events: list[EventRecord], cfg: RunConfig, out: Path) -> dict:
    """Binned decay probabilities (time series and joint scatter) for plotting."""
    reader = TraceReader(trace_path)
    out.mkdir(parents=True, exist_ok=True)
    n_b = cfg.n_b
    series = {}
    for label in reader.labels:
        outcomes_iter = reader.iter_channel(label, cfg.chunk_cycles - cfg.chunk_cycles % n_b or n_b)
        parts = []
        carry = np.zeros(0, dtype=np.uint8)
        for chunk in outcomes_iter:
            buf = np.concatenate([carry, chunk])
            whole = buf.size - buf.size % n_b
            if whole:
                bits = kernels.ggg(buf[:whole])
                parts.append(bin_decay_probability(ErrorStream(label, bits, reader.clock), n_b).counts)
            carry = buf[whole:]
        series[label] = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
    labels = reader.labels
    n_bins = min((s.size for s in series.values()), default=0)
    t = np.arange(n_bins) * n_b * reader.clock.dt_s
    arts = {}
    p = out / "binned_pd.csv"
    with open(p, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s"] + labels)
        for k in range(n_bins):
            w.writerow([f"{t[k]:.6f}"] + [f"{series[l][k] / (n_b - 2):.6f}" for l in labels])
    arts["binned_pd"] = str(p)
    for i, a in enumerate(labels):
        for b in labels[i + 1 :]:
            sa, sb = series[a][:n_bins], series[b][:n_bins]
            keep = np.flatnonzero((sa > 0) | (sb > 0))
            p = out / f"scatter_{slug(a)}_{slug(b)}.csv"
            _write_csv(
                p,
                ["time_s", f"p_d_{a}", f"p_d_{b}"],
                [[f"{t[k]:.6f}", f"{sa[k] / (n_b - 2):.6f}", f"{sb[k] / (n_b - 2):.6f}"] for k in keep],
            )
            arts[f"scatter_{slug(a)}_{slug(b)}"] = str(p)
    return arts


# --- roundtrip comparison -----------------------------------------------------


def _truth_for(gt_events: list[EventRecord], label: str, cfg: RunConfig) -> np.ndarray:
    topo = cfg.sim.topology
    ch = topo.channel(label)
    names = {label}
    if ch.kind is ChannelKind.ROUTER_PROBE:
        names.add(ch.linked_qubit)
    t = np.sort(np.array([e.start_ns for e in gt_events if e.channel in names], dtype=np.int64))
    if ch.kind is ChannelKind.ROUTER_PROBE and t.size:
        # a burst in both the router and its ancilla reads out as one
        sep = ms(cfg.detect.min_separation_ms)
        keep = [t[0]]
        for x in t[1:]:
            if x - keep[-1] >= sep:
                keep.append(x)
        t = np.array(keep, dtype=np.int64)
    return t


def compare_to_truth(gt_events: list[EventRecord], detected: list[EventRecord], cfg: RunConfig, n_cycles: int) -> dict:
    sim = cfg.sim
    period = sim.clock.cycle_period_ns
    T = n_cycles * period
    lo_edge = ms(cfg.detect.pre_onset_ms) + ms(cfg.detect.contrast_halfwidth_ms)
    hi_edge = T - ms(cfg.detect.window_ms)
    w = ms(cfg.stats.match_window_ms)
    hours = T / NS_PER_S / 3600.0
    per = {}
    q_found = q_total = 0
    errors = []
    for ch in sim.topology.channels:
        truth = _truth_for(gt_events, ch.label, cfg)
        truth = truth[(truth >= lo_edge) & (truth < hi_edge)]
        det = np.sort(np.array([e.start_ns for e in detected if e.channel == ch.label], dtype=np.int64))
        pairs = _greedy_match(truth, det, w)
        found = len(pairs)
        fp = det.size - found
        err = [int(det[j] - truth[i]) / NS_PER_S for i, j in pairs]
        per[ch.label] = {
            "n_truth": int(truth.size),
            "n_detected": int(det.size),
            "matched": found,
            "efficiency": found / truth.size if truth.size else None,
            "false_positives": int(fp),
            "false_positives_per_hour": fp / hours if hours > 0 else None,
        }
        if ch.kind is ChannelKind.QUBIT:
            q_found += found
            q_total += int(truth.size)
            errors.extend(err)
    e = np.abs(np.array(errors))
    summary = {
        "hours": hours,
        "qubit_efficiency": q_found / q_total if q_total else None,
        "qubit_truth_events": q_total,
        "max_false_positives_per_hour": max((v["false_positives_per_hour"] or 0.0) for v in per.values()),
        "channels": per,
        "start_time_error": {
            "n": int(e.size),
            "median_abs_s": float(np.median(e)) if e.size else None,
            "p90_abs_s": float(np.percentile(e, 90)) if e.size else None,
            "fraction_within_0p5ms": float(np.mean(e <= 0.5e-3)) if e.size else None,
        },
    }
    return summary


def roundtrip(cfg: RunConfig, out: Path) -> StageResult:
    gt, sim_res = simulate(cfg, out)
    detected, det_res = detect_file(out / TRACE_FILE, cfg)
    write_detections(detected, det_res, out)
    doc = events_document(
        detected, det_res.summary["channels"], det_res.summary["n_cycles"], det_res.summary["cycle_ns"], "detected"
    )
    report, tables, warns = compute_stats(doc, detected, cfg)
    arts = {**sim_res.artifacts, **det_res.artifacts, **write_stats(report, tables, out)}
    comparison = compare_to_truth(list(gt.events), detected, cfg, cfg.sim.n_cycles)
    _dump_json(out / SUMMARY_FILE, {"comparison": comparison, "stats": report})
    arts["summary"] = str(out / SUMMARY_FILE)
    res = StageResult(arts, det_res.warnings + warns, comparison)
    return res
