"""Closed-form capacity, reliability, delay and energy criteria.

All closed forms operate on arrays so the optimizer can evaluate a whole
population at once. ``path_oracle`` is an independent route that walks the
emission events hop by hop from the full rate and forwarding tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelParams, default_channel
from .netmodel import (
    DivergenceError,
    RelayLinks,
    Solution,
    StudyCase,
    Topology,
    decode_population,
    get_case,
    relay_links,
)

# Hop count reported as the delay when nothing reaches the destination: the
# shortest relayed path. Every case with a usable direct link has f_C > 0.
EMPTY_DELAY = 2.0


@dataclass(frozen=True)
class ObjectiveVector:
    f_C: float
    f_R: float
    f_D: float
    f_E: float
    f_R_available: bool = True

    def as_tuple(self) -> tuple[float, float, float]:
        """The three optimized axes: capacity, delay, energy."""
        return (self.f_C, self.f_D, self.f_E)


@dataclass(frozen=True)
class DerivedCriteria:
    fr_D: float
    fr_E: float
    fc_D: float
    fc_E: float


def _safe_div(num: np.ndarray, den: np.ndarray, fill: float) -> np.ndarray:
    num, den = np.broadcast_arrays(np.asarray(num, float), np.asarray(den, float))
    out = np.full(num.shape, fill)
    np.divide(num, den, out=out, where=den > 0)
    return out


def one_relay_objectives(
    p_sd: np.ndarray, q_sr: np.ndarray, p_rd: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Criteria of the single-relay topology.

    Args:
        p_sd: Direct link success.
        q_sr: Forwarding gain from the source into each relay slot, last axis
            indexes the relay's outgoing slot.
        p_rd: Relay to destination success per outgoing slot.

    Returns:
        ``(f_C, f_R, f_D, f_E)`` arrays.
    """
    p_sd = np.asarray(p_sd, float)
    via_relay = np.asarray(q_sr, float) * np.asarray(p_rd, float)
    f_c = p_sd + via_relay.sum(axis=-1)
    f_r = 1.0 - (1.0 - p_sd) * np.prod(1.0 - via_relay, axis=-1)
    f_d = _safe_div(p_sd + 2.0 * via_relay.sum(axis=-1), f_c, EMPTY_DELAY)
    f_e = 1.0 + np.asarray(q_sr, float).sum(axis=-1)
    return f_c, f_r, f_d, f_e


def two_relay_objectives(
    p_sd, q_sa, q_sb, q_ab, q_ba, p_ad, p_bd
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Criteria of the two-relay topology, summed over every loop length.

    ``q_*`` are forwarding gains (link success times forwarding probability).
    The returned reliability ignores the loop and is only exact when
    ``q_ab * q_ba == 0``.

    Raises:
        DivergenceError: If the loop gain ``q_ab * q_ba`` reaches one.
    """
    p_sd, q_sa, q_sb, q_ab, q_ba, p_ad, p_bd = (
        np.asarray(a, float) for a in (p_sd, q_sa, q_sb, q_ab, q_ba, p_ad, p_bd)
    )
    loop = q_ab * q_ba
    if np.any(loop >= 1.0):
        raise DivergenceError("inter-relay loop gain is not below one")
    into_a = q_sa + q_sb * q_ba  # first visit to A, directly or via B
    into_b = q_sb + q_sa * q_ab
    f_c = p_sd + (into_a * p_ad + into_b * p_bd) / (1.0 - loop)
    delay_a = p_ad * (q_sb * q_ba * (3.0 - loop) + 2.0 * q_sa)
    delay_b = p_bd * (q_sa * q_ab * (3.0 - loop) + 2.0 * q_sb)
    delay_mass = (delay_a + delay_b) / (1.0 - loop) ** 2 + p_sd
    f_d = _safe_div(delay_mass, f_c, EMPTY_DELAY)
    f_e = 1.0 + (into_a + into_b) / (1.0 - loop)
    f_r = 1.0 - (1.0 - p_sd) * (1.0 - q_sa * p_ad) * (1.0 - q_sb * p_bd)
    return f_c, f_r, f_d, f_e


def _one_relay_from_solution(sol: Solution) -> tuple[np.ndarray, ...]:
    case = sol.case
    s, r, d = case.source, case.relays[0], case.destination
    q_sr = sol.tau[s, 0] * sol.P[s, r, 0] * sol.X[s, r, 0, :]
    p_rd = sol.P[r, d, :]
    return one_relay_objectives(sol.tau[s, 0] * sol.P[s, d, 0], q_sr, p_rd)


def eval_one_relay(sol: Solution, case: StudyCase | int | None = None) -> ObjectiveVector:
    """Closed-form criteria for a single-relay solution (cases 1 and 2)."""
    case = get_case(case if case is not None else sol.case)
    if case.topology is not Topology.ONE_RELAY:
        raise ValueError(f"case {case.id} has two relays")
    f_c, f_r, f_d, f_e = (float(v) for v in _one_relay_from_solution(sol))
    return ObjectiveVector(f_c, f_r, f_d, f_e, True)


def eval_two_relay(sol: Solution, case: StudyCase | int | None = None) -> ObjectiveVector:
    """Closed-form criteria for a two-relay solution (cases 3 to 5).

    Reliability is reported only for the loop-free cases; with the loop it is
    flagged unavailable and left as NaN.
    """
    case = get_case(case if case is not None else sol.case)
    if case.topology is not Topology.TWO_RELAY:
        raise ValueError(f"case {case.id} has one relay")
    L = relay_links(sol)
    f_c, f_r, f_d, f_e = (
        float(v[0])
        for v in two_relay_objectives(L.p_sd, L.q_sa, L.q_sb, L.q_ab, L.q_ba, L.p_ad, L.p_bd)
    )
    if case.loop_allowed:
        return ObjectiveVector(f_c, math.nan, f_d, f_e, False)
    return ObjectiveVector(f_c, f_r, f_d, f_e, True)


def evaluate(sol: Solution) -> ObjectiveVector:
    if sol.case.topology is Topology.ONE_RELAY:
        return eval_one_relay(sol)
    return eval_two_relay(sol)


def objectives_from_links(links: RelayLinks, case: StudyCase) -> np.ndarray:
    """``(n, 4)`` array of ``(f_C, f_R, f_D, f_E)`` for decoded populations."""
    if case.topology is Topology.ONE_RELAY:
        out = one_relay_objectives(links.p_sd, links.q_sa[:, None], links.p_ad[:, None])
    else:
        out = two_relay_objectives(
            links.p_sd, links.q_sa, links.q_sb, links.q_ab, links.q_ba, links.p_ad, links.p_bd
        )
    res = np.column_stack(out)
    if case.loop_allowed:
        res[:, 1] = np.nan
    return res


def evaluate_population(
    genomes: np.ndarray, case: StudyCase | int, channel: ChannelParams | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate genomes in bulk.

    Returns:
        ``(objectives, violation)`` where objectives has columns
        ``(f_C, f_R, f_D, f_E)``.
    """
    case = get_case(case)
    links = decode_population(genomes, case, channel or default_channel())
    return objectives_from_links(links, case), links.violation


def derived_criteria(obj: ObjectiveVector) -> DerivedCriteria:
    """Reliability- and capacity-achieving delay and energy.

    Zero or unavailable denominators give ``inf``.
    """
    cap = min(obj.f_C, 1.0)
    rel = obj.f_R if obj.f_R_available else math.nan

    def div(a: float, b: float) -> float:
        return a / b if b > 0 else math.inf

    return DerivedCriteria(
        fr_D=div(obj.f_D, rel), fr_E=div(obj.f_E, rel),
        fc_D=div(obj.f_D, cap), fc_E=div(obj.f_E, cap),
    )


@dataclass(frozen=True)
class OracleResult:
    """Truncated path sums and the exact remainder of the discarded tail.

    Attributes:
        objectives: Criteria computed from the truncated sums.
        capacity: Delivered copies over paths of at most ``h_max`` hops.
        delay_mass: Hop-weighted delivered copies (capacity times delay).
        energy: Emissions with transmission index at most ``h_max``.
        tail_capacity, tail_delay_mass, tail_energy: Mass left out by truncation.
    """

    objectives: ObjectiveVector
    capacity: float
    delay_mass: float
    energy: float
    tail_capacity: float
    tail_delay_mass: float
    tail_energy: float


def path_series(P: np.ndarray, X: np.ndarray, tau_source: np.ndarray, h_max: int) -> tuple:
    """Walk emission events hop by hop for a batch of networks.

    Args:
        P: ``(batch, nodes, nodes, slots)`` channel probabilities.
        X: ``(batch, nodes, nodes, slots, slots)`` forwarding probabilities.
        tau_source: ``(batch, slots)`` source emission rates; node 0 is the
            source and the last node the destination.
        h_max: Largest transmission index kept.

    Returns:
        ``(capacity, delay_mass, energy)`` arrays of shape ``(batch,)``.
    """
    b, n, _, t = P.shape
    dest = n - 1
    # transfer[b, i*t+u, j*t+v]: emission of i in u becomes an emission of j in v
    transfer = np.einsum("biju,bijuv->biujv", P, X).reshape(b, n * t, n * t)
    deliver = P[:, :, dest, :].reshape(b, n * t)
    mass = np.zeros((b, n * t))
    mass[:, :t] = tau_source
    capacity = np.zeros(b)
    delay_mass = np.zeros(b)
    energy = np.zeros(b)
    for h in range(1, h_max + 1):
        arrived = np.einsum("bk,bk->b", mass, deliver)
        capacity += arrived
        delay_mass += h * arrived
        energy += mass.sum(axis=1)
        if h < h_max:
            mass = np.einsum("bk,bkl->bl", mass, transfer)
            if not mass.any():
                break
    return capacity, delay_mass, energy


def loop_tail(q_sa, q_sb, q_ab, q_ba, p_ad, p_bd, h_max: int) -> tuple:
    """Exact mass of the two-relay paths longer than ``h_max`` hops.

    Paths enter relay A or B from the source and then alternate across the
    loop; the discarded terms form geometric series in ``q_ab * q_ba``.
    """
    q = np.asarray(q_ab) * np.asarray(q_ba)
    n = h_max - 2
    k_even = math.ceil((n + 1) / 2)
    k_odd = math.ceil(n / 2)

    def g0(k):
        return _safe_div(q**k, 1.0 - q, 0.0)

    def g1(k):
        return _safe_div(q**k * (k * (1.0 - q) + q), (1.0 - q) ** 2, 0.0)

    even_del = q_sa * p_ad + q_sb * p_bd
    odd_del = q_sa * q_ab * p_bd + q_sb * q_ba * p_ad
    cap = even_del * g0(k_even) + odd_del * g0(k_odd)
    delay = even_del * (2 * g1(k_even) + 2 * g0(k_even)) + odd_del * (2 * g1(k_odd) + 3 * g0(k_odd))
    energy = (q_sa + q_sb) * g0(k_even) + (q_sa * q_ab + q_sb * q_ba) * g0(k_odd)
    return cap, delay, energy


def path_oracle_batch(solutions: list[Solution], h_max: int = 400) -> list[OracleResult]:
    """Path-enumeration criteria for many solutions sharing one study case."""
    if h_max < 2:
        raise ValueError("h_max must be at least 2")
    if not solutions:
        return []
    case = solutions[0].case
    P = np.stack([s.P for s in solutions])
    X = np.stack([s.X for s in solutions])
    tau_s = np.stack([s.tau[case.source] for s in solutions])
    cap, dm, en = path_series(P, X, tau_s, h_max)
    if case.topology is Topology.TWO_RELAY:
        a, b, d = case.relays[0], case.relays[1], case.destination
        g = np.einsum("biju,bijuv->bij", P, X)
        slot_a = min(case.slots_of("A"))
        slot_b = min(case.slots_of("B"))
        t_cap, t_dm, t_en = loop_tail(
            tau_s[:, 0] * g[:, 0, a], tau_s[:, 0] * g[:, 0, b], g[:, a, b], g[:, b, a],
            P[:, a, d, slot_a], P[:, b, d, slot_b], h_max,
        )
    else:
        t_cap = t_dm = t_en = np.zeros(len(solutions))
    out = []
    for k, sol in enumerate(solutions):
        f_c = float(cap[k])
        f_d = float(dm[k] / f_c) if f_c > 0 else EMPTY_DELAY
        obj = ObjectiveVector(f_c, math.nan, f_d, float(en[k]), False)
        out.append(OracleResult(obj, f_c, float(dm[k]), float(en[k]),
                                float(t_cap[k]), float(t_dm[k]), float(t_en[k])))
    return out


def path_oracle(sol: Solution, case: StudyCase | int | None = None, h_max: int = 400) -> OracleResult:
    """Criteria by summing every path of at most ``h_max`` hops.

    Args:
        sol: Decoded solution.
        case: Optional, must match ``sol.case``.
        h_max: Longest path kept, at least 2.
    """
    if case is not None and get_case(case) != sol.case:
        raise ValueError("case does not match the solution")
    return path_oracle_batch([sol], h_max)[0]
