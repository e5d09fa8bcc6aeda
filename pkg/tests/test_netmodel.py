import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relaybounds.netmodel import (
    LOOP_MARGIN,
    STUDY_CASES,
    DivergenceError,
    StructureError,
    decode_genome,
    decode_population,
    flow_consistency_residual,
    get_case,
    half_duplex_excess,
    parse_slot_table,
    relay_links,
    solution_from_record,
    solve_emission_rates,
    study_case_from_mapping,
)

from conftest import random_genomes


def test_case_catalogue():
    assert sorted(STUDY_CASES) == [1, 2, 3, 4, 5]
    assert get_case(1).slot_count == 2
    assert get_case(2).slot_count == 1
    assert get_case(4).loop_allowed and not get_case(3).loop_allowed
    assert get_case(5).slots_of("A") == get_case(5).slots_of("B") == frozenset({1})
    assert get_case(4).genome_names[-2:] == ("x_AB_23", "x_BA_32")


def test_unknown_case():
    with pytest.raises(StructureError):
        get_case(6)


def test_slot_table_roundtrip():
    slots = parse_slot_table("S; A,B")
    assert slots == (frozenset({"S"}), frozenset({"A", "B"}))
    assert study_case_from_mapping({"id": "5", "slots": "S;A,B", "loop": "no"}) is get_case(5)
    with pytest.raises(StructureError):
        study_case_from_mapping({"id": "3", "slots": "S;A,B"})


def test_genome_length_checked(channel):
    with pytest.raises(StructureError):
        decode_genome([1.0, 2.0], 1, channel)


def test_clamps_are_recorded(channel):
    sol = decode_genome([700.0, 0.0, 1.5], 1, channel)
    assert set(sol.clamped) == {"x_R", "x_SR_12"}
    assert sol.relay_positions[0, 0] == 620.0
    assert sol.forwarding == (1.0,)


def test_single_relay_rates(channel):
    sol = decode_genome([310.0, 0.0, 1.0], 1, channel)
    assert sol.tau[1, 1] == pytest.approx(sol.P[0, 1, 0])
    assert sol.tau[1, 0] == 0
    assert sol.feasible


def test_loop_gain_is_capped(channel):
    sol = decode_genome([300.0, 0.0, 320.0, 0.0, 1.0, 1.0, 1.0, 1.0], 4, channel)
    L = relay_links(sol)
    assert L.q_ab[0] == pytest.approx(1 - LOOP_MARGIN)
    assert L.q_ba[0] == pytest.approx(1 - LOOP_MARGIN)
    assert {"x_AB_23", "x_BA_32"} <= set(sol.clamped)


def test_divergent_loop_detected(channel):
    case = get_case(4)
    sol = decode_genome([300.0, 0.0, 320.0, 0.0, 1.0, 1.0, 0.5, 0.5], case, channel)
    X = np.array(sol.X)
    P = np.array(sol.P)
    X[1, 2, 1, 2] = X[2, 1, 2, 1] = 1.0
    P[1, 2, 1] = P[2, 1, 2] = 1.0
    with pytest.raises(DivergenceError):
        solve_emission_rates(case, P, X)


def test_record_roundtrip(channel):
    sol = decode_genome([200.0, 50.0, 400.0, -30.0, 0.7, 0.4], 3, channel)
    again = solution_from_record(sol.to_record(), channel)
    np.testing.assert_allclose(again.tau, sol.tau)
    assert again.to_record() == sol.to_record()


def test_half_duplex_violation_in_shared_slot(channel):
    # relay next to the source in a single shared slot: it hears S almost surely
    sol = decode_genome([10.0, 0.0, 1.0], 2, channel)
    assert half_duplex_excess(sol.tau, sol.P) > 0
    assert not sol.feasible


@pytest.mark.parametrize("cid", [1, 2, 3, 4, 5])
def test_batch_decode_matches_general_decode(cid, channel):
    genomes = random_genomes(cid, 25, seed=cid)
    links = decode_population(genomes, cid, channel)
    for k, g in enumerate(genomes):
        sol = decode_genome(g, cid, channel)
        ref = relay_links(sol)
        for name in ("p_sd", "q_sa", "q_sb", "q_ab", "q_ba", "p_ad", "p_bd"):
            assert getattr(links, name)[k] == pytest.approx(getattr(ref, name)[0], abs=1e-12), name
        assert (links.violation[k] > 1e-9) == (not sol.feasible)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(0, 10_000))
def test_feasible_solutions_are_consistent(cid, seed):
    g = random_genomes(cid, 1, seed=seed)[0]
    sol = decode_genome(g, cid)
    assert flow_consistency_residual(sol.tau, sol.X, sol.P) < 1e-9
    assert np.all(sol.tau >= 0)
    mask = sol.case.transmit_mask()
    assert np.all(sol.tau[~mask] == 0)
