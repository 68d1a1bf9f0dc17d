"""Simulation and detection of correlated decay bursts in repeated-measurement qubit traces."""
from .detect import DetectionParams, build_kernel, cross_correlate, detect_trace, find_events
from .kernels import BACKEND
from .model import ChannelSpec, CycleClock, EventRecord, EventSource, Topology, paper_topology
from .preprocess import bin_decay_probability, match_template_ggg
from .simulator import SimConfig, generate_events, simulate_router_trace, simulate_trace
from .stats import chance_coincidence, coincidence_matrix, fit_recovery, interarrival_stats, recovery_cdf
from .tracefile import read_traces, write_traces

__all__ = [
    "DetectionParams",
    "build_kernel",
    "cross_correlate",
    "detect_trace",
    "find_events",
    "BACKEND",
    "ChannelSpec",
    "CycleClock",
    "EventRecord",
    "EventSource",
    "Topology",
    "paper_topology",
    "bin_decay_probability",
    "match_template_ggg",
    "SimConfig",
    "generate_events",
    "simulate_router_trace",
    "simulate_trace",
    "chance_coincidence",
    "coincidence_matrix",
    "fit_recovery",
    "interarrival_stats",
    "recovery_cdf",
    "read_traces",
    "write_traces",
]

__version__ = "0.1.0"
