"""Topologies, slot assignments, emission rates, forwarding tables and feasibility.

Node indices are fixed: 0 is the source, 1..N are the relays and N+1 is the
destination. Slots are 0-based internally; record field names use 1-based
slots (``x_SA_12`` is the probability that A forwards, in slot 2, a packet
received from S in slot 1).

The free variables of a solution are the relay positions and the forwarding
probabilities. Emission rates follow from them through the flow-consistency
equations, so every decoded solution satisfies those equations by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .channel import ChannelParams, default_channel, link_success_array, link_table

EQ_TOL = 1e-9
LOOP_MARGIN = 0.05  # inter-relay loop gain is capped at 1 - LOOP_MARGIN per link


class Role(Enum):
    SOURCE = "source"
    RELAY = "relay"
    DESTINATION = "destination"


class Topology(Enum):
    ONE_RELAY = "one_relay"
    TWO_RELAY = "two_relay"


class StructureError(ValueError):
    """Raised when arrays or records do not match a study case's layout."""


class DivergenceError(ArithmeticError):
    """Raised when the inter-relay loop gain reaches one."""


@dataclass(frozen=True)
class NodeId:
    index: int
    role: Role
    name: str

    @property
    def relay_number(self) -> int | None:
        """0-based relay number, or None for the source and destination."""
        return self.index - 1 if self.role is Role.RELAY else None


@dataclass(frozen=True)
class StudyCase:
    """One of the five fixed topology and slot-assignment scenarios.

    Attributes:
        id: Case number, 1 to 5.
        topology: One or two relays.
        slot_count: Number of TDMA slots per frame.
        slot_assignment: For each node name, the 0-based slots it may transmit in.
        loop_allowed: Whether relays may forward each other's packets.
        free_forwarding: ``(i, j, u, v)`` node names and slots of the forwarding
            probabilities that are optimization variables, in genome order.
    """

    id: int
    topology: Topology
    slot_count: int
    slot_assignment: tuple[tuple[str, frozenset[int]], ...]
    loop_allowed: bool
    free_forwarding: tuple[tuple[str, str, int, int], ...]

    @property
    def relay_names(self) -> tuple[str, ...]:
        return ("R",) if self.topology is Topology.ONE_RELAY else ("A", "B")

    @property
    def node_names(self) -> tuple[str, ...]:
        return ("S", *self.relay_names, "D")

    @property
    def n_relays(self) -> int:
        return len(self.relay_names)

    @property
    def n_nodes(self) -> int:
        return self.n_relays + 2

    @property
    def nodes(self) -> tuple[NodeId, ...]:
        roles = [Role.SOURCE] + [Role.RELAY] * self.n_relays + [Role.DESTINATION]
        return tuple(NodeId(k, r, n) for k, (r, n) in enumerate(zip(roles, self.node_names)))

    @property
    def source(self) -> int:
        return 0

    @property
    def destination(self) -> int:
        return self.n_nodes - 1

    @property
    def relays(self) -> tuple[int, ...]:
        return tuple(range(1, self.n_nodes - 1))

    def index(self, name: str) -> int:
        return self.node_names.index(name)

    def slots_of(self, name: str) -> frozenset[int]:
        return dict(self.slot_assignment).get(name, frozenset())

    def transmit_mask(self) -> np.ndarray:
        """Boolean ``(nodes, slots)`` mask of allowed transmissions."""
        mask = np.zeros((self.n_nodes, self.slot_count), dtype=bool)
        for name, slots in self.slot_assignment:
            for u in slots:
                mask[self.index(name), u] = True
        return mask

    @property
    def fixed_zero_vars(self) -> tuple[tuple[str, int], ...]:
        mask = self.transmit_mask()
        return tuple(
            (name, u)
            for k, name in enumerate(self.node_names)
            for u in range(self.slot_count)
            if not mask[k, u]
        )

    @property
    def genome_names(self) -> tuple[str, ...]:
        pos = tuple(f"{axis}_{r}" for r in self.relay_names for axis in ("x", "y"))
        return pos + tuple(forwarding_name(*f) for f in self.free_forwarding)

    @property
    def genome_length(self) -> int:
        return 2 * self.n_relays + len(self.free_forwarding)


def forwarding_name(i: str, j: str, u: int, v: int) -> str:
    return f"x_{i}{j}_{u + 1}{v + 1}"


def _case(cid, topology, slots, loop, free):
    names = ("S", "R") if topology is Topology.ONE_RELAY else ("S", "A", "B")
    assignment = tuple(
        (n, frozenset(u for u, tx in enumerate(slots) if n in tx)) for n in names
    )
    return StudyCase(cid, topology, len(slots), assignment, loop, tuple(free))


STUDY_CASES: dict[int, StudyCase] = {
    1: _case(1, Topology.ONE_RELAY, [{"S"}, {"R"}], False, [("S", "R", 0, 1)]),
    2: _case(2, Topology.ONE_RELAY, [{"S", "R"}], False, [("S", "R", 0, 0)]),
    3: _case(
        3, Topology.TWO_RELAY, [{"S"}, {"A"}, {"B"}], False,
        [("S", "A", 0, 1), ("S", "B", 0, 2)],
    ),
    4: _case(
        4, Topology.TWO_RELAY, [{"S"}, {"A"}, {"B"}], True,
        [("S", "A", 0, 1), ("S", "B", 0, 2), ("A", "B", 1, 2), ("B", "A", 2, 1)],
    ),
    5: _case(
        5, Topology.TWO_RELAY, [{"S"}, {"A", "B"}], False,
        [("S", "A", 0, 1), ("S", "B", 0, 1)],
    ),
}


def get_case(case_id: int | StudyCase) -> StudyCase:
    if isinstance(case_id, StudyCase):
        return case_id
    try:
        return STUDY_CASES[int(case_id)]
    except (KeyError, ValueError):
        raise StructureError(f"unknown study case {case_id!r}; expected 1..5") from None


def parse_slot_table(text: str) -> tuple[frozenset[str], ...]:
    """Parse ``"S;A,B"`` into per-slot transmitter sets."""
    return tuple(
        frozenset(n.strip() for n in slot.split(",") if n.strip())
        for slot in text.split(";")
    )


def study_case_from_mapping(values: Mapping[str, str]) -> StudyCase:
    """Build a study case from config keys and check it matches a known row.

    Recognized keys: ``id`` (required), ``topology``, ``slots`` (slot table such
    as ``"S;A,B"``) and ``loop``. Optional keys must agree with the case named
    by ``id``.
    """
    if "id" not in values:
        raise StructureError("study case config needs an 'id' key")
    case = get_case(values["id"])
    if "topology" in values and values["topology"].strip() != case.topology.value:
        raise StructureError(
            f"case {case.id} has topology {case.topology.value}, config says {values['topology']}"
        )
    if "slots" in values:
        table = parse_slot_table(values["slots"])
        expected = tuple(
            frozenset(n for n, s in case.slot_assignment if u in s)
            for u in range(case.slot_count)
        )
        if table != expected:
            raise StructureError(f"slot table {values['slots']!r} does not match case {case.id}")
    if "loop" in values:
        loop = values["loop"].strip().lower() in ("1", "true", "yes", "on")
        if loop != case.loop_allowed:
            raise StructureError(f"loop flag {values['loop']!r} does not match case {case.id}")
    return case


def genome_bounds(case: StudyCase, d_sd: float) -> tuple[np.ndarray, np.ndarray]:
    """Lower and upper genome bounds.

    Relays live in the ``d_sd x d_sd`` square spanning the source-destination
    segment along x and centred on it along y.
    """
    lo = [0.0, -d_sd / 2] * case.n_relays + [0.0] * len(case.free_forwarding)
    hi = [d_sd, d_sd / 2] * case.n_relays + [1.0] * len(case.free_forwarding)
    return np.array(lo), np.array(hi)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Solution:
    """A decoded point of the search space with its derived rates.

    Attributes:
        case: Study case.
        d_sd: Source-destination distance in meters.
        relay_positions: ``(N, 2)`` relay coordinates.
        forwarding: Free forwarding probabilities in genome order, after clamps.
        tau: ``(nodes, slots)`` emission rates.
        X: ``(nodes, nodes, slots, slots)`` forwarding probabilities.
        P: ``(nodes, nodes, slots)`` channel probabilities.
        violation: Total constraint excess; 0 for feasible solutions.
        clamped: Names of genes changed by bound or loop clamps.
    """

    case: StudyCase
    d_sd: float
    relay_positions: np.ndarray
    forwarding: tuple[float, ...]
    tau: np.ndarray
    X: np.ndarray
    P: np.ndarray
    violation: float = 0.0
    clamped: tuple[str, ...] = field(default=())

    @property
    def feasible(self) -> bool:
        return self.violation <= EQ_TOL

    @property
    def genome(self) -> np.ndarray:
        return np.concatenate([self.relay_positions.ravel(), np.asarray(self.forwarding)])

    @property
    def node_positions(self) -> np.ndarray:
        return node_positions(self.relay_positions, self.d_sd)

    def to_record(self) -> dict[str, float | int]:
        """Flat record of the free variables plus derived emission rates."""
        rec: dict[str, float | int] = {"case": self.case.id, "d_sd": self.d_sd}
        rec.update(zip(self.case.genome_names, map(float, self.genome)))
        for k in self.case.relays:
            for u in sorted(self.case.slots_of(self.case.node_names[k])):
                rec[f"tau_{self.case.node_names[k]}_{u + 1}"] = float(self.tau[k, u])
        return rec


def node_positions(relay_positions: np.ndarray, d_sd: float) -> np.ndarray:
    rel = np.asarray(relay_positions, dtype=float).reshape(-1, 2)
    return np.vstack([[0.0, 0.0], rel, [d_sd, 0.0]])


def _relay_set(tau: np.ndarray) -> range:
    return range(1, tau.shape[0] - 1)


def _incoming(tau: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Cumulative incoming rate ``r[j, u] = sum_i tau[i, u] * P[i, j, u]``."""
    if P.shape != (tau.shape[0], tau.shape[0], tau.shape[1]):
        raise StructureError(f"P has shape {P.shape}, expected {(tau.shape[0],) * 2 + (tau.shape[1],)}")
    return np.einsum("iu,iju->ju", tau, P)


def flow_conservation_excess(tau: np.ndarray, P: np.ndarray) -> float:
    """Total amount by which relays emit more than they receive."""
    incoming = _incoming(tau, P)
    return float(
        sum(max(0.0, tau[j].sum() - incoming[j].sum()) for j in _relay_set(tau))
    )


def half_duplex_excess(tau: np.ndarray, P: np.ndarray) -> float:
    """Total half-duplex excess over relay slots shared with another transmitter.

    A relay competes between transmitting and receiving only in a slot where it
    emits and some other node emits too. Slots owned by a single transmitter
    carry no such conflict and may hold several packets.
    """
    incoming = _incoming(tau, P)
    active = tau > 0
    excess = 0.0
    for j in _relay_set(tau):
        for u in range(tau.shape[1]):
            if active[j, u] and active[:, u].sum() > 1:
                excess += max(0.0, incoming[j, u] + tau[j, u] - 1.0)
    return excess


def flow_consistency_residual(tau: np.ndarray, X: np.ndarray, P: np.ndarray) -> float:
    """Largest gap between a relay's emission rate and the traffic it forwards."""
    n, t = tau.shape
    if X.shape != (n, n, t, t):
        raise StructureError(f"X has shape {X.shape}, expected {(n, n, t, t)}")
    forwarded = np.einsum("iu,iju,ijuv->jv", tau, P, X)
    rel = list(_relay_set(tau))
    return float(np.max(np.abs(forwarded[rel] - tau[rel]))) if rel else 0.0


def check_flow_conservation(tau: np.ndarray, P: np.ndarray) -> bool:
    return flow_conservation_excess(tau, P) <= EQ_TOL


def check_half_duplex(tau: np.ndarray, P: np.ndarray) -> bool:
    return half_duplex_excess(tau, P) <= EQ_TOL


def check_flow_consistency(tau: np.ndarray, X: np.ndarray, P: np.ndarray) -> bool:
    return flow_consistency_residual(tau, X, P) <= EQ_TOL


def solve_emission_rates(case: StudyCase, P: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Emission rates that make every relay forward exactly what it schedules.

    Solves ``tau[j, v] = sum_{i,u} tau[i, u] P[i, j, u] X[i, j, u, v]`` for the
    relay rates, with the source emitting once per frame in slot 0.

    Raises:
        DivergenceError: If the relay-to-relay gain makes the system singular.
    """
    n, t = case.n_nodes, case.slot_count
    tau = np.zeros((n, t))
    tau[case.source, 0] = 1.0
    pairs = [(j, v) for j in case.relays for v in range(t)]
    m = len(pairs)
    gain = np.einsum("iju,ijuv->iujv", P, X)  # rate from (i, u) into (j, v)
    A = np.eye(m)
    b = np.zeros(m)
    for r, (j, v) in enumerate(pairs):
        b[r] = gain[case.source, 0, j, v]
        for c, (i, u) in enumerate(pairs):
            A[r, c] -= gain[i, u, j, v]
    if abs(np.linalg.det(A)) < 1e-12:
        raise DivergenceError("relay loop gain reaches one")
    sol = np.linalg.solve(A, b)
    for r, (j, v) in enumerate(pairs):
        tau[j, v] = max(0.0, sol[r])
    return tau


def _clamp_loop(case: StudyCase, X: np.ndarray, P: np.ndarray) -> None:
    """Cap each inter-relay forwarding gain ``p * x`` at ``1 - LOOP_MARGIN``."""
    if not case.loop_allowed:
        return
    cap = 1.0 - LOOP_MARGIN
    for i, j, u, v in case.free_forwarding:
        a, b = case.index(i), case.index(j)
        if a == case.source:
            continue
        p = P[a, b, u]
        if p * X[a, b, u, v] > cap:
            X[a, b, u, v] = cap / p


def decode_genome(
    genome: Sequence[float],
    case: StudyCase | int,
    channel: ChannelParams | None = None,
) -> Solution:
    """Turn a genome into a Solution with derived emission rates.

    Genes outside the search bounds are clamped and recorded. Emission rates
    and interference-averaged channel probabilities are solved jointly by fixed
    point iteration, which settles after two rounds because the source is the
    only transmitter whose rate is fixed and relay rates only depend on links
    that carry no interference from other relays.

    Args:
        genome: Relay coordinates followed by the free forwarding probabilities.
        case: Study case or its id.
        channel: Channel parameters; ``channel.d_sd`` fixes the geometry.

    Raises:
        StructureError: If the genome length does not match the case.
    """
    case = get_case(case)
    channel = channel or default_channel()
    g = np.asarray(genome, dtype=float)
    if g.shape != (case.genome_length,):
        raise StructureError(f"case {case.id} genome needs {case.genome_length} values, got {g.shape}")
    lo, hi = genome_bounds(case, channel.d_sd)
    g_clip = np.clip(g, lo, hi)
    clamped = [n for n, a, b in zip(case.genome_names, g, g_clip) if a != b]
    relay_pos = g_clip[: 2 * case.n_relays].reshape(-1, 2)
    pos = node_positions(relay_pos, channel.d_sd)

    n, t = case.n_nodes, case.slot_count
    X = np.zeros((n, n, t, t))
    for (i, j, u, v), val in zip(case.free_forwarding, g_clip[2 * case.n_relays:]):
        X[case.index(i), case.index(j), u, v] = val

    mask = case.transmit_mask()
    tau = np.zeros((n, t))
    tau[case.source, 0] = 1.0
    for _ in range(2 * t + 2):
        P = link_table(tau, pos, channel, transmit_mask=mask)
        _clamp_loop(case, X, P)
        new_tau = solve_emission_rates(case, P, X)
        if np.allclose(new_tau, tau, rtol=0, atol=1e-15):
            break
        tau = new_tau
    tau = new_tau
    P = link_table(tau, pos, channel, transmit_mask=mask)

    violation = (
        half_duplex_excess(tau, P)
        + flow_conservation_excess(tau, P)
        + flow_consistency_residual(tau, X, P)
    )
    free = tuple(
        float(X[case.index(i), case.index(j), u, v]) for i, j, u, v in case.free_forwarding
    )
    n_pos = 2 * case.n_relays
    for name, before, after in zip(case.genome_names[n_pos:], g_clip[n_pos:], free):
        if before != after and name not in clamped:
            clamped.append(name)
    return Solution(
        case=case,
        d_sd=channel.d_sd,
        relay_positions=_readonly(relay_pos),
        forwarding=free,
        tau=_readonly(tau),
        X=_readonly(X),
        P=_readonly(P),
        violation=float(violation),
        clamped=tuple(clamped),
    )


def solution_from_record(
    record: Mapping[str, object], channel: ChannelParams | None = None
) -> Solution:
    """Rebuild a Solution from a flat record written by ``Solution.to_record``."""
    case = get_case(int(float(record["case"])))  # type: ignore[arg-type]
    if channel is None:
        channel = default_channel(float(record.get("d_sd", 620.0)))  # type: ignore[arg-type]
    try:
        genome = [float(record[name]) for name in case.genome_names]  # type: ignore[arg-type]
    except KeyError as exc:
        raise StructureError(f"record for case {case.id} lacks field {exc}") from None
    return decode_genome(genome, case, channel)


@dataclass(frozen=True)
class RelayLinks:
    """Per-solution link gains used by the closed-form criteria.

    ``q_*`` fields are forwarding gains ``p * x`` and ``p_*d`` the relay to
    destination success probabilities in the relay's transmit slot. For one
    relay only ``q_sa`` and ``p_ad`` are used (the relay plays the role of A).
    All fields are arrays of equal shape.
    """

    p_sd: np.ndarray
    q_sa: np.ndarray
    q_sb: np.ndarray
    q_ab: np.ndarray
    q_ba: np.ndarray
    p_ad: np.ndarray
    p_bd: np.ndarray
    violation: np.ndarray
    genomes: np.ndarray


def decode_population(
    genomes: np.ndarray, case: StudyCase | int, channel: ChannelParams | None = None
) -> RelayLinks:
    """Vectorized decode of many genomes into link gains.

    This is a case-specific fast path; ``decode_genome`` is the general route
    and the two are cross-checked in the tests.
    """
    case = get_case(case)
    channel = channel or default_channel()
    g = np.atleast_2d(np.asarray(genomes, dtype=float))
    lo, hi = genome_bounds(case, channel.d_sd)
    g = np.clip(g, lo, hi)
    d_sd = channel.d_sd
    zeros = np.zeros(g.shape[0])

    def dist(x0, y0, x1, y1):
        return np.hypot(x1 - x0, y1 - y0)

    def ls(d, *interf):
        return link_success_array(d, interf, channel)

    if case.topology is Topology.ONE_RELAY:
        xr, yr, x = g[:, 0], g[:, 1], g[:, 2]
        d_sr = dist(0.0, 0.0, xr, yr)
        d_rd = dist(xr, yr, d_sd, 0.0)
        p_sr = ls(d_sr)
        tau_r = p_sr * x
        if case.id == 1:
            p_sd = ls(np.full_like(xr, d_sd))
            p_rd = ls(d_rd)
            violation = zeros
        else:
            free_sd = ls(np.full_like(xr, d_sd))
            jammed_sd = ls(np.full_like(xr, d_sd), d_rd)
            p_sd = (1.0 - tau_r) * free_sd + tau_r * jammed_sd
            p_rd = ls(d_rd, np.full_like(xr, d_sd))
            violation = np.maximum(0.0, p_sr + tau_r - 1.0) * (tau_r > 0)
        return RelayLinks(p_sd, tau_r, zeros, zeros, zeros, p_rd, zeros, violation, g)

    xa, ya, xb, yb = g[:, 0], g[:, 1], g[:, 2], g[:, 3]
    d_sa, d_sb = dist(0.0, 0.0, xa, ya), dist(0.0, 0.0, xb, yb)
    d_ad, d_bd = dist(xa, ya, d_sd, 0.0), dist(xb, yb, d_sd, 0.0)
    d_ab = dist(xa, ya, xb, yb)
    p_sd = ls(np.full_like(xa, d_sd))
    q_sa = ls(d_sa) * g[:, 4]
    q_sb = ls(d_sb) * g[:, 5]
    if case.id == 5:
        tau_a, tau_b = q_sa, q_sb
        p_ad = (1.0 - tau_b) * ls(d_ad) + tau_b * ls(d_ad, d_bd)
        p_bd = (1.0 - tau_a) * ls(d_bd) + tau_a * ls(d_bd, d_ad)
        p_ab = ls(d_ab)
        both = (tau_a > 0) & (tau_b > 0)
        violation = both * (
            np.maximum(0.0, tau_a + tau_b * p_ab - 1.0)
            + np.maximum(0.0, tau_b + tau_a * p_ab - 1.0)
        )
        return RelayLinks(p_sd, q_sa, q_sb, zeros, zeros, p_ad, p_bd, violation, g)

    p_ad, p_bd = ls(d_ad), ls(d_bd)
    if case.id == 3:
        return RelayLinks(p_sd, q_sa, q_sb, zeros, zeros, p_ad, p_bd, zeros, g)
    p_ab = ls(d_ab)
    cap = 1.0 - LOOP_MARGIN
    q_ab = np.minimum(p_ab * g[:, 6], cap)
    q_ba = np.minimum(p_ab * g[:, 7], cap)
    return RelayLinks(p_sd, q_sa, q_sb, q_ab, q_ba, p_ad, p_bd, zeros, g)


def relay_links(sol: Solution) -> RelayLinks:
    """Extract the link gains of a Solution from its full tables."""
    case = sol.case
    P, X = sol.P, sol.X
    s, d = case.source, case.destination
    gain = np.einsum("iju,ijuv->ij", P, X)
    one = np.ones(1)

    def tx_slot_p(k: int) -> float:
        slots = sorted(case.slots_of(case.node_names[k]))
        return float(P[k, d, slots[0]])

    a = case.relays[0]
    if case.topology is Topology.ONE_RELAY:
        return RelayLinks(
            P[s, d, 0] * one, gain[s, a] * one, 0 * one, 0 * one, 0 * one,
            tx_slot_p(a) * one, 0 * one, sol.violation * one, sol.genome[None, :],
        )
    b = case.relays[1]
    return RelayLinks(
        P[s, d, 0] * one, gain[s, a] * one, gain[s, b] * one, gain[a, b] * one,
        gain[b, a] * one, tx_slot_p(a) * one, tx_slot_p(b) * one,
        sol.violation * one, sol.genome[None, :],
    )


def shortest_path_hops(P: np.ndarray, case: StudyCase) -> int:
    """Hop count of the shortest structurally usable path (1 direct, else 2)."""
    return 1 if P[case.source, case.destination, 0] > 0 else 2


def distance(a: Sequence[float], b: Sequence[float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])
