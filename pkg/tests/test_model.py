import pytest
from hypothesis import given, strategies as st

from crl.model import (
    ChannelKind,
    ChannelSpec,
    CycleClock,
    EventRecord,
    EventSource,
    Topology,
    cycle_to_time,
    ms,
    paper_topology,
    time_to_cycle,
    us,
)


def test_paper_topology_values():
    topo = paper_topology()
    assert topo.channel("Q1").t1_base_us == 36.0
    assert topo.channel("Q2").region == topo.channel("Q4").region == "DB_B"
    router = [c for c in topo.channels if c.kind is ChannelKind.ROUTER_PROBE]
    assert len(router) == 1
    assert router[0].t1_base_us == 10.1
    assert router[0].region == "MB"
    assert router[0].linked_qubit == "Q2"
    assert "Q3" not in topo.labels


def test_paper_topology_is_pure():
    assert paper_topology() == paper_topology()


@pytest.mark.parametrize("t_ns,expected", [(0, 0), (us(10), 1), (ms(1), 100), (us(19.999), 1)])
def test_time_to_cycle(t_ns, expected):
    assert time_to_cycle(t_ns, CycleClock()) == expected


def test_time_to_cycle_rejects_negative():
    with pytest.raises(ValueError):
        time_to_cycle(-1, CycleClock())


@given(st.integers(0, 10**13), st.integers(2, 10**6))
def test_cycle_brackets_time(t, period):
    clock = CycleClock(period, 1)
    n = time_to_cycle(t, clock)
    assert cycle_to_time(n, clock) <= t < cycle_to_time(n + 1, clock)


def test_clock_validation():
    with pytest.raises(ValueError):
        CycleClock(1000, 1000)
    with pytest.raises(ValueError):
        CycleClock(1000, 0)


def test_channel_validation():
    with pytest.raises(ValueError):
        ChannelSpec("X", "MB", f_g=1.2)
    with pytest.raises(ValueError):
        ChannelSpec("X", "MB", t1_base_us=0.0)


def test_topology_rejects_unknown_region_and_duplicates():
    with pytest.raises(ValueError):
        Topology((ChannelSpec("A", "nowhere"),), ("MB",))
    with pytest.raises(ValueError):
        Topology((ChannelSpec("A", "MB"), ChannelSpec("A", "MB")), ("MB",))


def test_event_record_invariants():
    with pytest.raises(ValueError):
        EventRecord("Q1", 0, EventSource.DETECTED)
    with pytest.raises(ValueError):
        EventRecord("Q1", 0, EventSource.GROUND_TRUTH, peak_height=50.0, tau_ms=1.0)
    with pytest.raises(ValueError):
        EventRecord("Q1", 0, EventSource.GROUND_TRUTH, tau_ms=0.0)
    with pytest.raises(ValueError):
        EventRecord("Q1", 0, EventSource.GROUND_TRUTH, gamma0=-1.0, tau_ms=1.0)


def test_event_record_dict_round_trip():
    a = EventRecord("R∪Q2", 123_456_789, EventSource.GROUND_TRUTH, 1e7, 3.1)
    b = EventRecord("Q4", 5, EventSource.DETECTED, tau_ms=6.0, peak_height=151.5, low_confidence=True, tau_sigma_ms=0.2)
    for e in (a, b):
        assert EventRecord.from_dict(e.to_dict()) == e
