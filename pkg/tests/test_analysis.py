import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from relaybounds.analysis import (
    IDENTITY,
    LANDMARKS,
    active_relays,
    bound_label,
    check_single_relay_use,
    compare_bounds,
    comparison_table,
    generational_distance,
    load_bounds,
    set_dominates,
)
from relaybounds.netmodel import decode_genome
from relaybounds.pareto import BOUND_SIGNS, BoundEntry, ParetoBound, bound_from_solutions, write_bound_csv


def bound_of(points, kind="B_c_opt"):
    entries = tuple(BoundEntry(None, tuple(p), None) for p in points)
    return ParetoBound(kind, None, entries, BOUND_SIGNS)


def test_gd_examples():
    assert generational_distance([(1.0, 1.0)], [(1.0, 1.0)]).gd == 0.0
    r = generational_distance([(4.0, 4.0)], [(3.93, 3.93)])
    assert r.gd == pytest.approx(math.sqrt(2 * 0.07**2))
    r = generational_distance([(0.0, 0.0), (3.0, 4.0)], [(0.0, 0.0), (0.0, 0.0)], pairing=IDENTITY)
    assert r.gd == pytest.approx(5.0 / 2)
    assert r.distances == (0.0, 5.0)


def test_gd_nearest_pairing():
    r = generational_distance([(0.0, 0.0), (10.0, 10.0)], [(10.0, 10.5), (0.0, 0.5)])
    assert r.partners == (1, 0)
    assert r.gd == pytest.approx(math.sqrt(0.5) / 2)


def test_gd_errors():
    with pytest.raises(ValueError):
        generational_distance([], [(1.0, 1.0)])
    with pytest.raises(ValueError):
        generational_distance([(1.0, 1.0)], [(1.0, 1.0), (2.0, 2.0)], pairing=IDENTITY)
    with pytest.raises(ValueError):
        generational_distance([(1.0, 1.0)], [(1.0, 1.0)], pairing="bogus")


def test_gd_skips_infinite_points():
    r = generational_distance([(math.inf, 1.0), (1.0, 1.0)], [(1.0, 2.0)])
    assert r.skipped == (0,)
    assert r.gd == pytest.approx(1.0)


point_sets = arrays(np.float64, st.tuples(st.integers(1, 8), st.just(2)), elements=st.floats(-50, 50))


@settings(max_examples=50, deadline=None)
@given(point_sets, point_sets, st.floats(-20, 20), st.floats(0.1, 10))
def test_gd_translation_and_scaling(lo, up, shift, scale):
    base = generational_distance(lo, up).gd
    assert generational_distance(lo + shift, up + shift).gd == pytest.approx(base, abs=1e-7)
    assert generational_distance(lo * scale, up * scale).gd == pytest.approx(base * scale, rel=1e-7, abs=1e-9)
    assert base >= 0


def test_set_dominance():
    a = bound_of([(1.0, 3.0), (2.0, 2.0), (3.0, 1.0)])
    b = bound_of([(2.0, 3.5), (3.5, 2.0)])
    assert set_dominates(a, b)
    assert not set_dominates(b, a)
    assert not set_dominates(a, a)
    c = bound_of([(0.5, 5.0)])
    assert not set_dominates(a, c) and not set_dominates(c, a)


def test_compare_table():
    bounds = {"x": bound_of([(1.0, 1.0)]), "y": bound_of([(2.0, 2.0)]), "z": bound_of([(0.5, 3.0)])}
    rows = compare_bounds(bounds)
    assert [(c.first, c.second, c.first_dominates, c.second_dominates) for c in rows] == [
        ("x", "y", True, False), ("x", "z", False, False), ("y", "z", False, False)]
    text = comparison_table(rows)
    assert "x dominates" in text and "neither" in text


def test_labels_and_missing_files(tmp_path, channel):
    assert bound_label(1) == "sc1"
    assert bound_label(1, 310.0) == "sc1d310"
    sols = [decode_genome([310.0, 0.0, x], 1, channel) for x in (0.5, 1.0)]
    write_bound_csv(bound_from_solutions(sols), tmp_path / "sc1_B_opt.csv")
    assert set(load_bounds(tmp_path, ["sc1"], "B_opt")) == {"sc1"}
    with pytest.raises(FileNotFoundError, match="sc3"):
        load_bounds(tmp_path, ["sc1", "sc3"], "B_opt")


def test_single_relay_use_check(channel):
    one = decode_genome([310.0, 0.0, 310.0, 0.0, 1.0, 0.0], 5, channel)
    two = decode_genome([318.0, 0.0, 318.0, 0.0, 0.9, 0.9], 5, channel)
    assert active_relays(bound_from_solutions([one], filter_front=False)) == [1]
    assert active_relays(bound_from_solutions([two], filter_front=False)) == [2]
    assert check_single_relay_use("sc5", bound_from_solutions([one])).passed
    assert not check_single_relay_use("sc5", bound_from_solutions([one, two], filter_front=False)).passed


def test_landmark_check_reports_nearest_point():
    lm = next(lm for lm in LANDMARKS if lm.label == "sc3")
    good = lm.check(bound_of([(3.95, 3.93), (4.2, 3.7)]))
    assert good.passed and "off by 0.02" in good.detail
    assert not lm.check(bound_of([(4.2, 3.7)])).passed
    assert lm.check(bound_of([(4.1, 3.8)]), scale=2.0).passed
