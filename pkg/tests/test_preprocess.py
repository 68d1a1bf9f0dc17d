import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crl.model import CycleClock
from crl.preprocess import ErrorStream, QubitTrace, bin_decay_probability, match_template_ggg

from oracles import binned_bruteforce, ggg_bruteforce

G, E = 0, 1


def trace(outcomes, label="Q1"):
    return QubitTrace(label, CycleClock(), np.asarray(outcomes, dtype=np.uint8))


def test_all_e_gives_no_hits():
    assert not match_template_ggg(trace(np.ones(500))).bits.any()


def test_all_g_length_100():
    es = match_template_ggg(trace(np.zeros(100)))
    assert len(es) == 98 and es.bits.sum() == 98


def test_hand_example():
    es = match_template_ggg(trace([G, G, G, E, G, G, G]))
    assert es.bits.tolist() == [1, 0, 0, 0, 1]


def test_too_short():
    with pytest.raises(ValueError):
        match_template_ggg(trace([G, G]))


@given(st.lists(st.integers(0, 1), min_size=3, max_size=400))
def test_ggg_matches_bruteforce(outcomes):
    assert match_template_ggg(trace(outcomes)).bits.tolist() == ggg_bruteforce(outcomes)


def test_ggg_backends_agree(backend, rng):
    x = (rng.random(100_003) < 0.3).astype(np.uint8)
    assert np.array_equal(backend.ggg(x), np.array(ggg_bruteforce(x.tolist()), dtype=np.uint8))


def test_binning_examples():
    zeros = ErrorStream("Q1", np.zeros(998, dtype=np.uint8))
    assert np.all(bin_decay_probability(zeros).p_d == 0)
    es = match_template_ggg(trace(np.zeros(1000)))
    bs = bin_decay_probability(es, 100)
    assert bs.p_d.size == 10 and np.all(bs.p_d == 1.0)
    assert np.all(bs.counts == 98)


@settings(max_examples=60)
@given(st.integers(0, 2**32 - 1), st.integers(3, 150), st.integers(3, 3000))
def test_binning_matches_bruteforce(seed, n_b, n_cycles):
    r = np.random.default_rng(seed)
    bits = (r.random(n_cycles - 2) < r.random()).astype(np.uint8)
    bs = bin_decay_probability(ErrorStream("Q1", bits), n_b)
    assert bs.p_d.tolist() == binned_bruteforce(bits.tolist(), n_b)
    assert np.all((bs.p_d >= 0) & (bs.p_d <= 1))


def test_rejects_tiny_bins():
    with pytest.raises(ValueError):
        bin_decay_probability(ErrorStream("Q1", np.zeros(10, dtype=np.uint8)), 2)


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1), st.integers(0, 5))
def test_prepending_e_cycles_prepends_empty_bins(seed, k):
    r = np.random.default_rng(seed)
    out = (r.random(1234) < 0.5).astype(np.uint8)
    base = bin_decay_probability(match_template_ggg(trace(out)), 100).p_d
    longer = np.concatenate([np.ones(k * 100, dtype=np.uint8), out])
    shifted = bin_decay_probability(match_template_ggg(trace(longer)), 100).p_d
    assert np.all(shifted[:k] == 0)
    assert np.array_equal(shifted[k:], base)


@given(st.lists(st.integers(0, 1), min_size=3, max_size=60), st.lists(st.integers(0, 1), min_size=3, max_size=60))
def test_concatenation_differs_only_at_seam(a, b):
    whole = match_template_ggg(trace(a + b)).bits
    pa = match_template_ggg(trace(a)).bits
    pb = match_template_ggg(trace(b)).bits
    assert np.array_equal(whole[: pa.size], pa)
    assert np.array_equal(whole[pa.size + 2 :], pb)
    seam = whole[pa.size : pa.size + 2]
    assert seam.tolist() == ggg_bruteforce((a + b)[len(a) - 2 : len(a) + 2])


def test_binned_csv(tmp_path):
    bs = bin_decay_probability(match_template_ggg(trace(np.zeros(300))), 100)
    p = tmp_path / "b.csv"
    bs.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "time_s,p_d"
    assert lines[2] == "0.001000,1.000000"
