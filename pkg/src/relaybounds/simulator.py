"""Frame-driven Monte Carlo simulation of the slotted relay protocol.

Each frame the source emits a fresh packet in slot 1. Every listening node
draws its reception independently, using the success probability for the set
of nodes actually transmitting in that slot (``realized`` mode) or the averaged
channel probability (``averaged`` mode). A relay that receives a packet in slot
``u`` schedules it for slot ``v`` of the next frame with probability
``x[u, v]``. A node transmitting in a slot hears nothing in that slot.
"""

from __future__ import annotations

import math
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channel import ChannelParams, default_channel, link_success_array
from .netmodel import Solution, shortest_path_hops

REALIZED, AVERAGED = "realized", "averaged"


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    Attributes:
        frames: Frames in which the source emits.
        seed: Seed of the run's random stream.
        interference_mode: ``"realized"`` or ``"averaged"``.
        buffer_capacity: Packets a relay holds per outgoing slot; ``None`` is
            unbounded. With a finite capacity the newest packet evicts the
            oldest.
        literal_forwarding: Use one shared draw per reception and send in
            every slot whose forwarding probability is at most that draw.
        event_log: Keep a per-transmission and per-reception trace.
        drain: Keep running after the last source frame until the relays have
            flushed their buffers, so late packets are still counted.
        max_drain_frames: Cap on extra frames spent draining.
    """

    frames: int = 10_000
    seed: int = 0
    interference_mode: str = REALIZED
    buffer_capacity: int | None = None
    literal_forwarding: bool = False
    event_log: bool = False
    drain: bool = True
    max_drain_frames: int = 100_000

    def __post_init__(self) -> None:
        if self.frames < 1:
            raise ValueError("frames must be at least 1")
        if self.interference_mode not in (REALIZED, AVERAGED):
            raise ValueError(f"unknown interference mode {self.interference_mode!r}")
        if self.buffer_capacity is not None and self.buffer_capacity < 1:
            raise ValueError("buffer_capacity must be positive or None")


@dataclass(frozen=True)
class Event:
    """One line of the trace: ``kind`` is ``"tx"`` or ``"rx"``.

    For receptions ``peer`` is the transmitter; for transmissions it is -1.
    ``hops`` is the transmission index: 1 for the source emission, one more per relay.
    """

    frame: int
    slot: int
    kind: str
    node: int
    peer: int
    packet: int
    hops: int

    def __str__(self) -> str:
        return (
            f"{self.frame} {self.slot + 1} {self.kind} node={self.node} "
            f"peer={self.peer} packet={self.packet} hops={self.hops}"
        )


@dataclass(frozen=True)
class SimMetrics:
    f_C: float
    f_D: float
    f_E: float
    f_R: float
    delay_histogram: dict[int, int]
    n_rx: int
    n_tx_source: int
    n_tx_relays: int
    n_distinct: int
    frames_run: int
    events: tuple[Event, ...] | None = field(default=None, repr=False)


class LinkPlan:
    """Precomputed reception lists for every slot and transmitter set.

    ``receivers[u][mask][i]`` lists ``(j, p)`` pairs: node ``j`` hears node
    ``i`` with probability ``p`` when the nodes in bitmask ``mask`` transmit in
    slot ``u``. Transmitting nodes and the source never receive.
    ``forward[i][j][u]`` lists ``(v, x)`` forwarding options with ``x > 0``.
    """

    def __init__(self, sol: Solution, mode: str = REALIZED, channel: ChannelParams | None = None):
        case = sol.case
        self.case = case
        self.n = case.n_nodes
        self.T = case.slot_count
        self.dest = case.destination
        channel = channel or default_channel(sol.d_sd)
        pos = sol.node_positions
        mask = case.transmit_mask()
        self.slot_relays = [[r for r in case.relays if mask[r, u]] for u in range(self.T)]
        self.forward = [[[[] for _ in range(self.T)] for _ in range(self.n)] for _ in range(self.n)]
        for i in range(self.n):
            for j in case.relays:
                for u in range(self.T):
                    for v in range(self.T):
                        x = float(sol.X[i, j, u, v])
                        if x > 0:
                            self.forward[i][j][u].append((v, x))
        dist = np.hypot(*(pos[:, None, :] - pos[None, :, :]).transpose(2, 0, 1))
        self.receivers: list[dict[int, dict[int, list[tuple[int, float]]]]] = []
        for u in range(self.T):
            allowed = [k for k in range(self.n) if mask[k, u]]
            per_mask: dict[int, dict[int, list[tuple[int, float]]]] = {}
            for bits in range(1, 1 << len(allowed)):
                active = [allowed[b] for b in range(len(allowed)) if bits >> b & 1]
                m = sum(1 << k for k in active)
                lists = {}
                for i in active:
                    out = []
                    for j in range(1, self.n):
                        if j in active:
                            continue
                        if mode == REALIZED:
                            interf = [dist[k, j] for k in active if k != i]
                            p = float(link_success_array(dist[i, j], interf, channel))
                        else:
                            p = float(sol.P[i, j, u])
                        if p > 0:
                            out.append((j, p))
                    lists[i] = out
                per_mask[m] = lists
            self.receivers.append(per_mask)


def simulate(sol: Solution, case=None, cfg: SimConfig | None = None,
             channel: ChannelParams | None = None) -> SimMetrics:
    """Run the protocol on one solution and return empirical criteria.

    Args:
        sol: Decoded solution (its forwarding table drives the relays).
        case: Optional, must match ``sol.case`` when given.
        cfg: Simulation settings.
        channel: Channel parameters; defaults to the calibrated channel for
            the solution's geometry.
    """
    cfg = cfg or SimConfig()
    if case is not None and getattr(case, "id", case) != sol.case.id:
        raise ValueError("case does not match the solution")
    plan = LinkPlan(sol, cfg.interference_mode, channel)
    rnd = random.Random(cfg.seed).random
    n, T, dest = plan.n, plan.T, plan.dest
    slot_relays = plan.slot_relays
    # receivers[u][mask][i] -> (j, p, forwarding options or None for the destination)
    receivers = [
        {m: {i: [(j, p, None if j == dest else plan.forward[i][j][u]) for j, p in lst]
             for i, lst in per.items()}
         for m, per in plan.receivers[u].items()}
        for u in range(T)
    ]
    cap = cfg.buffer_capacity
    literal = cfg.literal_forwarding
    log: list[Event] | None = [] if cfg.event_log else None

    queues = [[[] for _ in range(T)] for _ in range(n)]
    hist: Counter[int] = Counter()
    seen: set[int] = set()
    n_rx = n_tx_relays = 0
    frame = 0
    last = cfg.frames + (cfg.max_drain_frames if cfg.drain else 0)
    queued = 0
    while frame < cfg.frames or (queued and frame < last):
        nxt = [[[] for _ in range(T)] for _ in range(n)]
        queued = 0
        for u in range(T):
            txs = [(0, frame, 1)] if u == 0 and frame < cfg.frames else []
            bits = 1 if txs else 0
            for r in slot_relays[u]:
                q = queues[r][u]
                if q:
                    bits |= 1 << r
                    n_tx_relays += len(q)
                    for pid, hops in q:
                        txs.append((r, pid, hops))
            if not bits:
                continue
            table = receivers[u][bits]
            for node, pid, hops in txs:
                if log is not None:
                    log.append(Event(frame, u, "tx", node, -1, pid, hops))
                for j, p, options in table[node]:
                    if rnd() >= p:
                        continue
                    if log is not None:
                        log.append(Event(frame, u, "rx", j, node, pid, hops))
                    if options is None:
                        n_rx += 1
                        hist[hops] += 1
                        seen.add(pid)
                        continue
                    for v, x in options:
                        if literal:
                            if x > rnd():
                                continue
                        elif rnd() >= x:
                            continue
                        buf = nxt[j][v]
                        buf.append((pid, hops + 1))
                        queued += 1
                        if cap is not None and len(buf) > cap:
                            del buf[0]
                            queued -= 1
        queues = nxt
        frame += 1

    n_src = cfg.frames
    if n_rx:
        f_d = sum(h * c for h, c in hist.items()) / n_rx
    else:
        f_d = float(shortest_path_hops(sol.P, sol.case))
    return SimMetrics(
        f_C=n_rx / n_src,
        f_D=f_d,
        f_E=(n_src + n_tx_relays) / n_src,
        f_R=len(seen) / n_src,
        delay_histogram=dict(sorted(hist.items())),
        n_rx=n_rx,
        n_tx_source=n_src,
        n_tx_relays=n_tx_relays,
        n_distinct=len(seen),
        frames_run=frame,
        events=tuple(log) if log is not None else None,
    )


def merge_metrics(runs: Sequence[SimMetrics]) -> SimMetrics:
    """Pool independent runs by summing their counts."""
    if not runs:
        raise ValueError("no runs to merge")
    hist: Counter[int] = Counter()
    for r in runs:
        hist.update(r.delay_histogram)
    n_rx = sum(r.n_rx for r in runs)
    n_src = sum(r.n_tx_source for r in runs)
    n_rel = sum(r.n_tx_relays for r in runs)
    n_dist = sum(r.n_distinct for r in runs)
    f_d = sum(h * c for h, c in hist.items()) / n_rx if n_rx else runs[0].f_D
    return SimMetrics(
        f_C=n_rx / n_src, f_D=f_d, f_E=(n_src + n_rel) / n_src, f_R=n_dist / n_src,
        delay_histogram=dict(sorted(hist.items())), n_rx=n_rx, n_tx_source=n_src,
        n_tx_relays=n_rel, n_distinct=n_dist, frames_run=sum(r.frames_run for r in runs),
    )


def simulate_seeds(sol: Solution, seeds: Sequence[int], cfg: SimConfig | None = None,
                   channel: ChannelParams | None = None) -> SimMetrics:
    """Pooled metrics over several seeds."""
    cfg = cfg or SimConfig()
    from dataclasses import replace

    return merge_metrics([simulate(sol, None, replace(cfg, seed=s), channel) for s in seeds])


@dataclass(frozen=True)
class RmseResult:
    """Per-axis relative RMSE with the entries skipped for a zero reference."""

    values: dict[str, float]
    skipped: dict[str, tuple[int, ...]]
    n: int


AXES = ("f_C", "f_D", "f_E")


def rmse(
    analytic: Sequence[Sequence[float]] | object,
    simulated: Sequence[SimMetrics],
    axes: Sequence[str] = AXES,
) -> RmseResult:
    """Relative root mean square error between model and simulation.

    ``RMSE = (1/N) * sqrt(sum_i ((f_i - g_i) / f_i) ** 2)`` per axis, where the
    sum skips entries whose model value is zero; skipped entries are listed.

    Args:
        analytic: A ParetoBound of kind B_opt, or rows of model values in the
            order of ``axes``.
        simulated: Simulated metrics aligned with the analytic entries.
        axes: Axis names, attributes of SimMetrics.
    """
    if hasattr(analytic, "entries"):
        rows = [[getattr(e.criteria, a) for a in axes] for e in analytic.entries]
    else:
        rows = [list(r) for r in analytic]  # type: ignore[union-attr]
    if len(rows) != len(simulated):
        raise ValueError("analytic and simulated sets are not aligned")
    n = len(rows)
    values, skipped = {}, {}
    for k, a in enumerate(axes):
        total, skip = 0.0, []
        for i, (row, sim) in enumerate(zip(rows, simulated)):
            f = float(row[k])
            if f == 0 or not math.isfinite(f):
                skip.append(i)
                continue
            total += ((f - getattr(sim, a)) / f) ** 2
        values[a] = math.sqrt(total) / n if n else 0.0
        skipped[a] = tuple(skip)
    return RmseResult(values, skipped, n)
