"""``crl simulate|detect|stats|report|roundtrip`` command line."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import pipeline
from .config import ConfigError, RunConfig, parse_config
from .tracefile import TraceFormatError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("crl")


class InputMissing(OSError):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crl", description="Correlated decay-burst simulation and detection.")
    sub = parser.add_subparsers(dest="cmd", required=True)
    helps = {
        "simulate": "write a trace file and ground-truth events",
        "detect": "detect bursts in a trace file",
        "stats": "coincidence, interval and recovery statistics from an event list",
        "report": "CSV tables for plotting (binned series, scatter, statistics)",
        "roundtrip": "simulate, detect and compare with ground truth",
    }
    for name, h in helps.items():
        p = sub.add_parser(name, help=h)
        p.add_argument("--config", type=Path, default=None, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override sim.seed")
        p.add_argument("--in", dest="inp", type=Path, default=None, help="input trace (detect/report) or event list (stats)")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _resolve(args: argparse.Namespace) -> tuple[RunConfig, Path]:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, sim=dataclasses.replace(cfg.sim, seed=args.seed))
    out = args.out if args.out is not None else Path(cfg.out_dir)
    return cfg, out


def _need(path: Optional[Path], what: str) -> Path:
    if path is None or not path.exists():
        raise InputMissing(f"missing {what}: {path}")
    return path


def run_pipeline(cmd: str, cfg: RunConfig, out: Path, inp: Optional[Path] = None) -> pipeline.StageResult:
    out = Path(out)
    if cmd == "simulate":
        _, res = pipeline.simulate(cfg, out)
        return res
    if cmd == "detect":
        trace = _need(inp or out / pipeline.TRACE_FILE, "trace file")
        events, res = pipeline.detect_file(trace, cfg)
        pipeline.write_detections(events, res, out)
        return res
    if cmd == "stats":
        src = _need(inp or out / pipeline.EVENTS_FILE, "event list")
        doc, events = pipeline.load_events(src)
        report, tables, warns = pipeline.compute_stats(doc, events, cfg)
        return pipeline.StageResult(pipeline.write_stats(report, tables, out), warns, report)
    if cmd == "report":
        trace = _need(inp or out / pipeline.TRACE_FILE, "trace file")
        ev_path = out / pipeline.EVENTS_FILE
        res = pipeline.StageResult()
        if ev_path.exists():
            doc, events = pipeline.load_events(ev_path)
        else:
            events, det = pipeline.detect_file(trace, cfg)
            pipeline.write_detections(events, det, out)
            res.warnings.extend(det.warnings)
            doc, events = pipeline.load_events(ev_path)
        report, tables, warns = pipeline.compute_stats(doc, events, cfg)
        res.artifacts.update(pipeline.write_stats(report, tables, out))
        res.artifacts.update(pipeline.figure_tables(trace, events, cfg, out))
        res.warnings.extend(warns)
        res.summary = report
        return res
    if cmd == "roundtrip":
        return pipeline.roundtrip(cfg, out)
    raise ValueError(f"unknown subcommand {cmd!r}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg, out = _resolve(args)
        res = run_pipeline(args.cmd, cfg, out, args.inp)
    except (FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"crl: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"crl: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, TraceFormatError) as exc:
        print(f"crl: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    for w in res.warnings:
        print(f"crl: warning: {w}", file=sys.stderr)
    print(json.dumps({"command": args.cmd, "artifacts": res.artifacts}, indent=2, ensure_ascii=False, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
