"""Compiled vs numpy kernels, plus the chunked detection scan on each backend.

    python benchmarks/bench_kernels.py [--cycles N] [--repeat R]
"""
import argparse
import time
from unittest import mock

import numpy as np

from crl import detect, kernels
from crl.detect import DetectionParams, scan_stream
from crl.model import CycleClock


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cycles", type=int, default=20_000_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    n = args.cycles
    rng = np.random.default_rng(args.seed)
    outcomes = (rng.random(n) >= 0.03).astype(np.uint8)
    params = DetectionParams()
    clock = CycleClock()
    ker = params.kernel_for("Q2", clock)
    bits = kernels.ggg(outcomes)
    y = kernels.mf_correlate(bits, ker.pre_taps, ker.post_taps, ker.ratio, ker.c)
    chunk = 1 << 22

    rows = []
    for name, be in sorted(kernels.backends().items()):
        cases = {
            "ggg": lambda: be.ggg(outcomes),
            "mf_correlate": lambda: be.mf_correlate(bits, ker.pre_taps, ker.post_taps, ker.ratio, ker.c),
            "supra_runs": lambda: be.supra_runs(y, params.candidate_threshold),
        }

        def scan():
            chunks = (outcomes[i : i + chunk] for i in range(0, n, chunk))
            with mock.patch.object(detect, "kernels", be):
                scan_stream(chunks, "Q2", clock, params)

        cases["scan_stream"] = scan
        for case, fn in cases.items():
            t = best_of(fn, args.repeat)
            rows.append((case, name, t, n / t))

    print(f"{n:,} cycles, best of {args.repeat}")
    print(f"{'kernel':<14}{'backend':<9}{'seconds':>10}{'Mcycles/s':>12}{'speedup':>9}")
    base = {case: t for case, name, t, _ in rows if name == "python"}
    for case, name, t, rate in sorted(rows):
        print(f"{case:<14}{name:<9}{t:>10.3f}{rate / 1e6:>12.1f}{base[case] / t:>9.1f}x")


if __name__ == "__main__":
    main()
