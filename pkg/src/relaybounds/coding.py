"""Random linear fountain coding over GF(2) and relay recombination strategies.

Coefficient vectors are Python integers used as bitsets: bit ``k`` set means
fragment ``k`` takes part in the combination. The coded experiment runs the
slotted protocol of :mod:`relaybounds.simulator` until the destination can
decode ``K`` fragments.
"""

from __future__ import annotations

import functools
import itertools
import math
import operator
import random
from collections import Counter, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .channel import ChannelParams
from .netmodel import Solution
from .simulator import REALIZED, Event, LinkPlan

PACKET_BITS = 20480  # packet length; K coefficient bits are carried in each packet
RXOR_MEMORY = 8
MAX_FRAMES = 1_000_000


class Strategy(str, Enum):
    NONE = "none"
    RXOR = "rxor"
    RLNC = "rlnc"


class DecodeOutcome(str, Enum):
    INNOVATIVE = "innovative"
    REDUNDANT = "redundant"
    COMPLETE = "complete"


class DisconnectedError(RuntimeError):
    """Raised when the destination cannot receive enough packets to decode."""


def rl_encode(K: int, rng: random.Random) -> int:
    """Uniform random nonzero coefficient vector of length ``K``."""
    if K < 1:
        raise ValueError("K must be at least 1")
    while True:
        v = rng.getrandbits(K)
        if v:
            return v


@dataclass(frozen=True)
class CodedPacket:
    """A coded packet in flight.

    Attributes:
        coeffs: Coefficient bitset.
        hops: Transmissions the packet has gone through, 1 when sent by the source.
        born_frame: Frame in which the source emitted the packet this one was
            triggered by.
    """

    coeffs: int
    hops: int = 1
    born_frame: int = 0


@dataclass
class DecoderState:
    """Incremental GF(2) Gaussian elimination.

    ``pivots`` maps a leading bit to a stored row whose highest set bit is that
    bit. Each row carries an optional payload combined along with it, so
    synthetic fragments can be recovered by back substitution.
    """

    K: int
    pivots: dict[int, tuple[int, object]] = field(default_factory=dict)
    received: int = 0

    @property
    def rank(self) -> int:
        return len(self.pivots)

    @property
    def complete(self) -> bool:
        return self.rank == self.K

    def solve(self) -> list[object]:
        """Recover fragment payloads once the system is complete.

        Payloads must support ``^``. Raises ValueError when rank < K.
        """
        if not self.complete:
            raise ValueError(f"rank {self.rank} < {self.K}, cannot solve")
        rows = dict(self.pivots)
        for bit in range(self.K):  # lower pivots first, so each row reduces to a unit vector
            v, pay = rows[bit]
            rest = v & ~(1 << bit)
            while rest:
                b = rest.bit_length() - 1
                bv, bpay = rows[b]
                v ^= bv
                pay = pay ^ bpay
                rest = v & ~(1 << bit)
            rows[bit] = (v, pay)
        return [rows[b][1] for b in range(self.K)]


def decoder_add(state: DecoderState, coeffs: int | CodedPacket, payload: object = 0) -> DecodeOutcome:
    """Reduce one received vector against the basis.

    Returns:
        ``COMPLETE`` when this vector brings the rank to ``K``, ``INNOVATIVE``
        when it only raises the rank, ``REDUNDANT`` otherwise.
    """
    v = coeffs.coeffs if isinstance(coeffs, CodedPacket) else coeffs
    if v >> state.K:
        raise ValueError(f"coefficient vector wider than K={state.K}")
    state.received += 1
    pivots = state.pivots
    while v:
        top = v.bit_length() - 1
        row = pivots.get(top)
        if row is None:
            pivots[top] = (v, payload)
            return DecodeOutcome.COMPLETE if len(pivots) == state.K else DecodeOutcome.INNOVATIVE
        v ^= row[0]
        payload = payload ^ row[1]
    return DecodeOutcome.REDUNDANT


class RelayMemory:
    """FIFO of the last ``capacity`` coefficient vectors received by a relay."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("memory capacity must be positive")
        self.capacity = capacity
        self.fifo: deque[int] = deque(maxlen=capacity)

    def store(self, coeffs: int) -> None:
        self.fifo.append(coeffs)

    def __len__(self) -> int:
        return len(self.fifo)


def combine_rxor(p: int, mem: RelayMemory) -> int:
    """XOR the trigger ``p`` (the newest entry) with every other stored vector.

    A zero result falls back to ``p``.
    """
    out = p
    others = list(mem.fifo)[:-1]
    for q in others:
        out ^= q
    return out or p


def combine_rlnc(p: int, mem: RelayMemory, rng: random.Random) -> int:
    """Random binary combination: each other stored vector joins with probability 1/2."""
    out = p
    others = list(mem.fifo)[:-1]
    if others:
        m = len(others)
        coins = rng.getrandbits(m).to_bytes((m + 7) // 8, "little")
        picks = np.unpackbits(np.frombuffer(coins, np.uint8), bitorder="little")[:m]
        out = functools.reduce(operator.xor, itertools.compress(others, picks.tolist()), p)
    return out or p


def relay_step(
    mem: RelayMemory,
    packet: CodedPacket,
    options: Sequence[tuple[int, float]],
    strategy: Strategy | str,
    rng: random.Random,
    literal: bool = False,
) -> list[tuple[int, CodedPacket]]:
    """Store a received packet and decide which slots it is re-emitted in.

    Args:
        mem: Memory of the receiving relay; the packet is always stored.
        packet: Received packet.
        options: ``(slot, probability)`` forwarding options for this reception.
        strategy: Recombination strategy.
        rng: Random stream.
        literal: Use one shared draw ``x`` and emit in every slot whose
            forwarding probability is at most ``x``.

    Returns:
        ``(slot, packet)`` emissions scheduled for the next frame.
    """
    strategy = Strategy(strategy)
    mem.store(packet.coeffs)
    if not any(x > 0 for _, x in options):
        return []
    if strategy is Strategy.RXOR:
        coeffs = combine_rxor(packet.coeffs, mem)
    elif strategy is Strategy.RLNC:
        coeffs = combine_rlnc(packet.coeffs, mem, rng)
    else:
        coeffs = packet.coeffs
    out = CodedPacket(coeffs, packet.hops + 1, packet.born_frame)
    if literal:
        x = rng.random()
        return [(v, out) for v, xv in options if xv <= x]
    return [(v, out) for v, xv in options if rng.random() < xv]


@dataclass(frozen=True)
class CodedConfig:
    """Settings of one coded run.

    Attributes:
        seed: Seed of the run's random stream.
        memory: Relay memory size; ``None`` picks 8 for R-XOR and ``K`` otherwise.
        interference_mode: ``"realized"`` or ``"averaged"``.
        literal_forwarding: See :func:`relay_step`.
        packet_bits: Packet length used for the coefficient overhead.
        max_frames: Abort threshold.
        event_log: Keep a transmission and reception trace.
    """

    seed: int = 0
    memory: int | None = None
    interference_mode: str = REALIZED
    literal_forwarding: bool = False
    packet_bits: int = PACKET_BITS
    max_frames: int = MAX_FRAMES
    event_log: bool = False


@dataclass(frozen=True)
class CodingMetrics:
    """Outcome of one coded transfer of ``K`` fragments."""

    K: int
    strategy: str
    fc_D: float
    fc_E: float
    overhead_pct: float
    n_tx_source: int
    n_tx_relays: int
    n_rx_before_decode: int
    excess: int
    mean_hops: float
    frames_run: int
    events: tuple[Event, ...] | None = field(default=None, repr=False)


def coefficient_penalty(K: int, packet_bits: int = PACKET_BITS) -> float:
    """Factor by which carrying ``K`` coefficient bits inflates delay and energy."""
    if K >= packet_bits:
        raise ValueError("coefficients do not fit in the packet")
    return packet_bits / (packet_bits - K)


def _reaches_destination(plan: LinkPlan) -> bool:
    """True when some chain of positive-probability links leads from S to D."""
    reach = {0}
    frontier = [0]
    while frontier:
        i = frontier.pop()
        for u in range(plan.T):
            for lists in plan.receivers[u].values():
                for j, _ in lists.get(i, ()):
                    if j in reach:
                        continue
                    if j == plan.dest or any(plan.forward[i][j][w] for w in range(plan.T)):
                        reach.add(j)
                        frontier.append(j)
    return plan.dest in reach


def simulate_coded(
    sol: Solution,
    case=None,
    K: int = 100,
    strategy: Strategy | str = Strategy.RLNC,
    cfg: CodedConfig | None = None,
    channel: ChannelParams | None = None,
) -> CodingMetrics:
    """Send RL coded packets until the destination decodes ``K`` fragments.

    The source emits one fresh coded packet in slot 1 of every frame and stops
    as soon as the destination's rank reaches ``K``. Relays recombine with
    ``strategy`` and forward with the solution's probabilities.

    The source packet count ``N_TXs`` is taken from the emission frame of the
    packet that completed decoding, and relay emissions are counted up to that
    moment. Delay and energy are multiplied by the coefficient overhead factor.

    Raises:
        DisconnectedError: If no path reaches the destination, or decoding does
            not finish within ``cfg.max_frames`` frames.
    """
    cfg = cfg or CodedConfig()
    strategy = Strategy(strategy)
    if case is not None and getattr(case, "id", case) != sol.case.id:
        raise ValueError("case does not match the solution")
    penalty = coefficient_penalty(K, cfg.packet_bits)
    plan = LinkPlan(sol, cfg.interference_mode, channel)
    if not _reaches_destination(plan):
        raise DisconnectedError("the destination is unreachable from the source")
    rng = random.Random(cfg.seed)
    rnd = rng.random
    n, T, dest = plan.n, plan.T, plan.dest
    memory = cfg.memory or (RXOR_MEMORY if strategy is Strategy.RXOR else K)
    mems = {r: RelayMemory(memory) for r in sol.case.relays}
    log: list[Event] | None = [] if cfg.event_log else None

    decoder = DecoderState(K)
    hist: Counter[int] = Counter()
    queues: list[list[list[CodedPacket]]] = [[[] for _ in range(T)] for _ in range(n)]
    n_tx_relays = 0
    frame = 0
    done: CodedPacket | None = None
    while done is None:
        if frame >= cfg.max_frames:
            raise DisconnectedError(f"decoding did not finish within {cfg.max_frames} frames")
        nxt: list[list[list[CodedPacket]]] = [[[] for _ in range(T)] for _ in range(n)]
        for u in range(T):
            txs: list[tuple[int, CodedPacket]] = []
            if u == 0:
                txs.append((0, CodedPacket(rl_encode(K, rng), 1, frame)))
            bits = 1 if txs else 0
            for r in plan.slot_relays[u]:
                if queues[r][u]:
                    bits |= 1 << r
                    txs.extend((r, pk) for pk in queues[r][u])
            if not bits:
                continue
            table = plan.receivers[u][bits]
            for node, pk in txs:
                if node != 0:
                    n_tx_relays += 1
                if log is not None:
                    log.append(Event(frame, u, "tx", node, -1, pk.born_frame, pk.hops))
                for j, p in table[node]:
                    if rnd() >= p:
                        continue
                    if log is not None:
                        log.append(Event(frame, u, "rx", j, node, pk.born_frame, pk.hops))
                    if j == dest:
                        hist[pk.hops] += 1
                        if decoder_add(decoder, pk.coeffs) is DecodeOutcome.COMPLETE:
                            done = pk
                            break
                        continue
                    for v, out in relay_step(mems[j], pk, plan.forward[node][j][u], strategy,
                                             rng, cfg.literal_forwarding):
                        nxt[j][v].append(out)
                if done is not None:
                    break
            if done is not None:
                break
        queues = nxt
        frame += 1

    n_rx = decoder.received
    n_src = done.born_frame + 1
    mean_h = sum(h * c for h, c in hist.items()) / n_rx
    excess = n_rx - K
    return CodingMetrics(
        K=K,
        strategy=strategy.value,
        fc_D=mean_h * n_src / K * penalty,
        fc_E=(n_src + n_tx_relays) / K * penalty,
        overhead_pct=excess / K * 100.0,
        n_tx_source=n_src,
        n_tx_relays=n_tx_relays,
        n_rx_before_decode=n_rx,
        excess=excess,
        mean_hops=mean_h,
        frames_run=frame,
        events=tuple(log) if log is not None else None,
    )


def mean_coding_metrics(runs: Sequence[CodingMetrics]) -> CodingMetrics:
    """Average of several runs of the same solution, K and strategy."""
    if not runs:
        raise ValueError("no runs to average")
    m = len(runs)

    def avg(name: str) -> float:
        return sum(getattr(r, name) for r in runs) / m

    first = runs[0]
    return CodingMetrics(
        K=first.K, strategy=first.strategy, fc_D=avg("fc_D"), fc_E=avg("fc_E"),
        overhead_pct=avg("overhead_pct"), n_tx_source=round(avg("n_tx_source")),
        n_tx_relays=round(avg("n_tx_relays")), n_rx_before_decode=round(avg("n_rx_before_decode")),
        excess=round(avg("excess")), mean_hops=avg("mean_hops"), frames_run=round(avg("frames_run")),
    )


def direct_excess(K: int, rng: random.Random) -> int:
    """Packets beyond ``K`` needed to decode over an erasure-free direct link."""
    state = DecoderState(K)
    while decoder_add(state, rl_encode(K, rng)) is not DecodeOutcome.COMPLETE:
        pass
    return state.received - K


def expected_excess(K: int) -> float:
    """Exact mean of :func:`direct_excess` for nonzero uniform vectors.

    From rank ``i`` a fresh vector is innovative with probability
    ``(2**K - 2**i) / (2**K - 1)``; the waiting times are geometric.
    """
    total = 0.0
    for i in range(K):
        # (2^K - 1) / (2^K - 2^i) written to stay finite for large K
        total += (1.0 - math.ldexp(1.0, -K)) / (1.0 - math.ldexp(1.0, i - K))
    return total - K
