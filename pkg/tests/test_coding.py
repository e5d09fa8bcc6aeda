import itertools
import random
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from relaybounds.coding import (
    CodedConfig,
    CodedPacket,
    DecodeOutcome,
    DecoderState,
    DisconnectedError,
    RelayMemory,
    Strategy,
    coefficient_penalty,
    combine_rlnc,
    combine_rxor,
    decoder_add,
    direct_excess,
    expected_excess,
    mean_coding_metrics,
    relay_step,
    rl_encode,
    simulate_coded,
)
from relaybounds.netmodel import decode_genome


def gf2_rank(vectors, K):
    """Rank by plain row reduction over a list of bit lists."""
    rows = [[(v >> k) & 1 for k in range(K)] for v in vectors]
    rank = 0
    for col in range(K):
        pivot = next((r for r in range(rank, len(rows)) if rows[r][col]), None)
        if pivot is None:
            continue
        rows[rank], rows[pivot] = rows[pivot], rows[rank]
        for r in range(len(rows)):
            if r != rank and rows[r][col]:
                rows[r] = [a ^ b for a, b in zip(rows[r], rows[rank])]
        rank += 1
    return rank


def memory_of(*vectors, capacity=8):
    mem = RelayMemory(capacity)
    for v in vectors:
        mem.store(v)
    return mem


def test_encode_basics():
    rng = random.Random(0)
    assert {rl_encode(1, rng) for _ in range(50)} == {1}
    weights = [bin(rl_encode(50, rng)).count("1") for _ in range(100_000)]
    assert np.mean(weights) == pytest.approx(25, abs=0.5)
    with pytest.raises(ValueError):
        rl_encode(0, rng)


def test_decoder_examples():
    state = DecoderState(3)
    assert decoder_add(state, 0b011) is DecodeOutcome.INNOVATIVE
    assert decoder_add(state, 0b011) is DecodeOutcome.REDUNDANT
    assert decoder_add(state, 0b110) is DecodeOutcome.INNOVATIVE
    assert decoder_add(state, 0b101) is DecodeOutcome.REDUNDANT
    assert state.rank == 2 and state.received == 4
    assert decoder_add(state, 0b001) is DecodeOutcome.COMPLETE
    with pytest.raises(ValueError):
        decoder_add(DecoderState(2), 0b100)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.lists(st.integers(1, 2**12 - 1), min_size=1, max_size=20))
def test_rank_matches_brute_force(K, raw):
    vectors = [v & ((1 << K) - 1) or 1 for v in raw]
    state = DecoderState(K)
    previous = 0
    for k, v in enumerate(vectors):
        decoder_add(state, v)
        assert previous <= state.rank <= min(k + 1, K)
        previous = state.rank
    assert state.rank == gf2_rank(vectors, K)


@pytest.mark.parametrize("K", [10, 50, 100])
def test_decoder_recovers_payloads(K):
    rng = random.Random(K)
    for _ in range(1000):
        payloads = [rng.getrandbits(64) for _ in range(K)]
        state = DecoderState(K)
        while not state.complete:
            v = rl_encode(K, rng)
            p = 0
            for k in range(K):
                if v >> k & 1:
                    p ^= payloads[k]
            decoder_add(state, v, p)
        assert state.solve() == payloads


def test_solve_needs_full_rank():
    with pytest.raises(ValueError):
        DecoderState(2).solve()


def test_rxor_combination():
    a, b = 0b0011, 0b0110
    assert combine_rxor(a, memory_of(a)) == a
    assert combine_rxor(a, memory_of(b, a)) == a ^ b
    assert combine_rxor(a, memory_of(a, a)) == a  # cancels to zero, falls back


def test_rlnc_combination_law():
    rng = random.Random(3)
    a, b = 0b0011, 0b0110
    assert combine_rlnc(a, memory_of(a), rng) == a
    seen = Counter(combine_rlnc(a, memory_of(b, a), rng) for _ in range(2000))
    assert set(seen) == {a, a ^ b}
    # three independent companions: the 8 subsets are equally likely
    others = [0b0001_0000, 0b0010_0000, 0b0100_0000]
    mem = memory_of(*others, a)
    draws = Counter(combine_rlnc(a, mem, rng) for _ in range(10_000))
    expected = {a ^ sum(c) for r in range(4) for c in itertools.combinations(others, r)}
    assert set(draws) == expected
    assert chisquare([draws[v] for v in sorted(expected)]).pvalue > 0.01


def test_memory_capacity_one_degenerates_to_forwarding():
    rng = random.Random(1)
    mem = RelayMemory(1)
    for v in (5, 9, 12, 3):
        mem.store(v)
        assert combine_rxor(v, mem) == v
        assert combine_rlnc(v, mem, rng) == v
    assert len(mem) == 1


def test_memory_evicts_oldest():
    mem = memory_of(1, 2, 3, capacity=2)
    assert list(mem.fifo) == [2, 3]
    with pytest.raises(ValueError):
        RelayMemory(0)


def test_relay_step_rules():
    rng = random.Random(2)
    mem = RelayMemory(4)
    pk = CodedPacket(0b101, hops=2, born_frame=7)
    out = relay_step(mem, pk, [(1, 1.0)], Strategy.NONE, rng)
    assert out == [(1, CodedPacket(0b101, 3, 7))]
    assert relay_step(mem, pk, [(1, 0.0)], "rlnc", rng) == []
    assert len(mem) == 2  # stored even when not forwarded
    hits = sum(bool(relay_step(RelayMemory(2), pk, [(0, 0.5)], "none", rng)) for _ in range(10_000))
    assert hits / 10_000 == pytest.approx(0.5, abs=0.02)
    hits = sum(bool(relay_step(RelayMemory(2), pk, [(0, 0.2)], "none", rng, literal=True)) for _ in range(10_000))
    assert hits / 10_000 == pytest.approx(0.8, abs=0.02)


def test_excess_law():
    assert expected_excess(1) == 0.0
    assert expected_excess(100) == pytest.approx(1.6067, abs=1e-4)
    rng = random.Random(9)
    mean = np.mean([direct_excess(20, rng) for _ in range(10_000)])
    assert 1.4 <= mean <= 1.8
    assert mean == pytest.approx(expected_excess(20), abs=0.05)


def test_coefficient_penalty():
    assert coefficient_penalty(50) == pytest.approx(20480 / 20430)
    with pytest.raises(ValueError):
        coefficient_penalty(20480)


def test_direct_link_without_relay_use(channel_310):
    # relay ignored, direct link only: every received packet is a source packet
    sol = decode_genome([155.0, 0.0, 0.0], 1, channel_310)
    m = simulate_coded(sol, K=30, strategy="none", cfg=CodedConfig(seed=1))
    assert m.n_tx_relays == 0
    assert m.n_rx_before_decode == m.K + m.excess
    assert m.overhead_pct == pytest.approx(100 * m.excess / 30)
    assert m.fc_E == pytest.approx(m.n_tx_source / 30 * coefficient_penalty(30))


def test_unreachable_destination(channel):
    sol = decode_genome([310.0, 0.0, 0.0], 1, channel)
    with pytest.raises(DisconnectedError):
        simulate_coded(sol, K=10, cfg=CodedConfig(seed=0))


def test_frame_guard(channel):
    sol = decode_genome([310.0, 0.0, 0.01], 1, channel)
    with pytest.raises(DisconnectedError):
        simulate_coded(sol, K=10, cfg=CodedConfig(seed=0, max_frames=20))


def test_hops_follow_event_log(channel):
    sol = decode_genome([300.0, 30.0, 320.0, -30.0, 1.0, 1.0, 0.8, 0.8], 4, channel)
    m = simulate_coded(sol, K=20, strategy="rxor", cfg=CodedConfig(seed=4, event_log=True))
    last_rx = {}
    for ev in m.events:
        if ev.kind == "rx":
            last_rx[(ev.frame, ev.node, ev.packet, ev.hops)] = True
        elif ev.node != 0:
            assert (ev.frame - 1, ev.node, ev.packet, ev.hops - 1) in last_rx
        else:
            assert ev.hops == 1


@pytest.mark.parametrize("strategy", ["none", "rxor", "rlnc"])
def test_coded_run_is_seed_deterministic(strategy, channel):
    sol = decode_genome([310.0, 0.0, 310.0, 0.0, 1.0, 1.0], 3, channel)
    a = simulate_coded(sol, K=20, strategy=strategy, cfg=CodedConfig(seed=5))
    b = simulate_coded(sol, K=20, strategy=strategy, cfg=CodedConfig(seed=5))
    assert a == b
    assert a.n_rx_before_decode >= 20
    avg = mean_coding_metrics([a, b])
    assert avg.fc_D == a.fc_D
