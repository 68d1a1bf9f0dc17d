import numpy as np
import pytest

from crl import kernels


@pytest.fixture(params=sorted(kernels.backends()))
def backend(request):
    return kernels.backends()[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def quiet_config(duration_s=0.2, seed=1, **kw):
    """Default topology with no spontaneous impacts; events are injected by hand."""
    from crl.model import paper_topology, seconds
    from crl.simulator import SimConfig

    topo = paper_topology()
    return SimConfig(
        duration_ns=seconds(duration_s), region_rates={r: 0.0 for r in topo.regions}, seed=seed, **kw
    )


def injected(cfg, events):
    """GroundTruth carrying ``events`` as (channel, start_ns, tau_ms, gamma0) tuples."""
    from crl.model import EventRecord, EventSource
    from crl.simulator import GroundTruth

    recs = tuple(
        sorted((EventRecord(c, int(t), EventSource.GROUND_TRUTH, g, tau) for c, t, tau, g in events), key=lambda e: e.start_ns)
    )
    return GroundTruth(recs, {}, cfg)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
