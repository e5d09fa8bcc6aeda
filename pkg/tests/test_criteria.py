import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relaybounds.criteria import (
    EMPTY_DELAY,
    ObjectiveVector,
    derived_criteria,
    evaluate,
    evaluate_population,
    loop_tail,
    one_relay_objectives,
    path_oracle,
    path_oracle_batch,
    two_relay_objectives,
)
from relaybounds.netmodel import DivergenceError, decode_genome

from conftest import random_genomes


def brute_force_two_relay(p_sd, q_sa, q_sb, q_ab, q_ba, p_ad, p_bd, h_max=2000):
    """Sum path contributions by walking the relay alternation explicitly."""
    cap, delay, energy = p_sd, p_sd, 1.0
    # state: (mass sitting at relay, relay, hops so far)
    frontier = [(q_sa, "A", 1), (q_sb, "B", 1)]
    while frontier:
        mass, at, hops = frontier.pop()
        if mass < 1e-300 or hops > h_max:
            continue
        energy += mass
        p_out, q_next, other = (p_ad, q_ab, "B") if at == "A" else (p_bd, q_ba, "A")
        cap += mass * p_out
        delay += mass * p_out * (hops + 1)
        frontier.append((mass * q_next, other, hops + 1))
    return cap, delay, energy


def test_single_relay_examples():
    f = [float(v) for v in one_relay_objectives(0.0, [0.5], [0.5])]
    assert f == pytest.approx([0.25, 0.25, 2.0, 1.5])
    f = [float(v) for v in one_relay_objectives(0.5, [1.0], [1.0])]
    assert f == pytest.approx([1.5, 1.0, 5 / 3, 2.0])
    f = [float(v) for v in one_relay_objectives(0.5, [0.0], [1.0])]
    assert f == pytest.approx([0.5, 0.5, 1.0, 1.0])


def test_two_relay_without_loop():
    p = 0.504
    f_c, f_r, f_d, f_e = (float(v) for v in two_relay_objectives(0.0, p, p, 0, 0, p, p))
    assert f_c == pytest.approx(2 * p * p)
    assert f_d == 2.0
    assert f_e == pytest.approx(1 + 2 * p)
    assert f_r == pytest.approx(1 - (1 - p * p) ** 2)


def test_loop_closed_form_example():
    f_c, _, f_d, f_e = (float(v) for v in two_relay_objectives(0.0, 0.5, 0.5, 0.95, 0.95, 0.5, 0.5))
    assert f_c == pytest.approx(10.0, abs=1e-9)
    assert f_d == pytest.approx(21.0, abs=1e-9)
    assert f_e == pytest.approx(21.0, abs=1e-9)


def test_loop_divergence():
    with pytest.raises(DivergenceError):
        two_relay_objectives(0.0, 0.5, 0.5, 1.0, 1.0, 0.5, 0.5)


@settings(max_examples=80, deadline=None)
@given(*[st.floats(0.0, 1.0) for _ in range(3)], st.floats(0.0, 0.9), st.floats(0.0, 0.9),
       st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_two_relay_matches_explicit_walk(p_sd, q_sa, q_sb, q_ab, q_ba, p_ad, p_bd):
    f_c, _, f_d, f_e = (float(v) for v in two_relay_objectives(p_sd, q_sa, q_sb, q_ab, q_ba, p_ad, p_bd))
    cap, delay, energy = brute_force_two_relay(p_sd, q_sa, q_sb, q_ab, q_ba, p_ad, p_bd)
    assert f_c == pytest.approx(cap, abs=1e-9)
    assert f_e == pytest.approx(energy, abs=1e-9)
    if cap > 0:
        assert f_d == pytest.approx(delay / cap, rel=1e-9)
    else:
        assert f_d == EMPTY_DELAY


def test_zero_capacity_delay_sentinel():
    f_c, _, f_d, f_e = (float(v) for v in two_relay_objectives(0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5))
    assert (f_c, f_d, f_e) == (0.0, EMPTY_DELAY, 1.0)


def test_derived_criteria():
    d = derived_criteria(ObjectiveVector(0.5, 0.4, 2.0, 1.0))
    assert (d.fc_D, d.fc_E) == (4.0, 2.0)
    d = derived_criteria(ObjectiveVector(1.5, 0.75, 1.5, 1.5))
    assert (d.fc_D, d.fc_E, d.fr_D, d.fr_E) == (1.5, 1.5, 2.0, 2.0)
    d = derived_criteria(ObjectiveVector(0.0, 0.0, 2.0, 1.0))
    assert math.isinf(d.fc_D) and math.isinf(d.fr_E)
    d = derived_criteria(ObjectiveVector(2.0, math.nan, 20.0, 21.0, False))
    assert (d.fc_D, d.fc_E) == (20.0, 21.0)
    assert math.isinf(d.fr_D)


def test_case1_delay_is_two_without_direct_link(channel):
    for x in (0.1, 0.5, 1.0):
        crit = evaluate(decode_genome([300.0, 20.0, x], 1, channel))
        assert crit.f_D == 2.0


@pytest.mark.parametrize("cid", [1, 3])
def test_oracle_h2_is_exact_without_loop(cid, channel):
    genomes = random_genomes(cid, 20, seed=7)
    for g in genomes:
        sol = decode_genome(g, cid, channel)
        o = path_oracle(sol, h_max=2)
        crit = evaluate(sol)
        assert o.capacity == pytest.approx(crit.f_C, abs=1e-12)
        assert o.energy == pytest.approx(crit.f_E, abs=1e-12)


def test_loop_tail_accounts_for_truncation():
    args = (0.5, 0.5, 0.95, 0.95, 0.5, 0.5)
    f_c, _, f_d, f_e = (float(v) for v in two_relay_objectives(0.0, *args))
    for h_max in (10, 51, 200, 400):
        cap, delay, energy = brute_force_two_relay(0.0, *args, h_max=h_max - 1)
        t_cap, t_delay, t_energy = (float(v) for v in loop_tail(*args, h_max=h_max))
        assert cap + t_cap == pytest.approx(f_c, abs=1e-9)
        assert delay + t_delay == pytest.approx(f_c * f_d, abs=1e-7)
        assert energy + t_energy == pytest.approx(f_e, abs=1e-9)


@pytest.mark.parametrize("cid", [1, 2, 3, 4, 5])
def test_oracle_with_tail_matches_closed_forms(cid, channel):
    genomes = random_genomes(cid, 200, seed=cid + 100)
    sols = [decode_genome(g, cid, channel) for g in genomes]
    sols = [s for s in sols if s.feasible]
    for sol, o in zip(sols, path_oracle_batch(sols, h_max=400)):
        crit = evaluate(sol)
        assert o.capacity + o.tail_capacity == pytest.approx(crit.f_C, abs=1e-8)
        assert o.delay_mass + o.tail_delay_mass == pytest.approx(crit.f_C * crit.f_D, abs=1e-8)
        assert o.energy + o.tail_energy == pytest.approx(crit.f_E, abs=1e-8)


@pytest.mark.parametrize("cid", [1, 2, 3, 5])
def test_capacity_at_least_reliability(cid, channel):
    obj, viol = evaluate_population(random_genomes(cid, 2000, seed=cid), cid, channel)
    ok = viol <= 1e-9
    assert np.all(obj[ok, 0] >= obj[ok, 1] - 1e-12)


def test_reliability_equals_capacity_on_single_path(channel):
    # no direct link at 620 m, so the relay route is the only path
    crit = evaluate(decode_genome([310.0, 0.0, 0.8], 1, channel))
    assert crit.f_C == pytest.approx(crit.f_R)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(0, 100_000))
def test_objective_invariants(cid, seed):
    obj, viol = evaluate_population(random_genomes(cid, 1, seed=seed), cid)
    f_c, f_r, f_d, f_e = obj[0]
    assert f_c >= 0 and f_d >= 1 and f_e >= 1
    if not np.isnan(f_r):
        assert f_c >= f_r - 1e-12
    d = derived_criteria(ObjectiveVector(f_c, f_r, f_d, f_e, not np.isnan(f_r)))
    if 0 < f_c <= 1:
        assert d.fc_D >= f_d and d.fc_E >= f_e


def test_population_matches_single_evaluation(channel):
    genomes = random_genomes(4, 30, seed=3)
    obj, _ = evaluate_population(genomes, 4, channel)
    for g, row in zip(genomes, obj):
        crit = evaluate(decode_genome(g, 4, channel))
        assert row[[0, 2, 3]] == pytest.approx([crit.f_C, crit.f_D, crit.f_E], rel=1e-10)
        assert np.isnan(row[1]) and not crit.f_R_available
