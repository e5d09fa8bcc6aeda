"""Dominance, NSGA-II search and the performance bounds derived from its front."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .channel import ChannelParams, default_channel
from .criteria import ObjectiveVector, derived_criteria, evaluate, evaluate_population
from .netmodel import (
    Solution,
    StudyCase,
    decode_genome,
    genome_bounds,
    get_case,
    solution_from_record,
)

MAX, MIN = "max", "min"
OPT_SIGNS = (MAX, MIN, MIN)  # capacity, delay, energy
BOUND_SIGNS = (MIN, MIN)
KINDS = ("B_opt", "B_c", "B_r", "B_c_opt", "B_r_opt")
DEDUP_RESOLUTION = 1e-6

Evaluator = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


def _to_min(points: np.ndarray, signs: Sequence[str]) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != len(signs):
        raise ValueError(f"points of arity {pts.shape[-1]} do not match {len(signs)} signs")
    flip = np.array([-1.0 if s == MAX else 1.0 for s in signs])
    return pts * flip


def dominates(a: Sequence[float], b: Sequence[float], signs: Sequence[str]) -> bool:
    """True when ``a`` is at least as good as ``b`` everywhere and better somewhere."""
    if not len(a) == len(b) == len(signs):
        raise ValueError("dominance needs tuples and signs of equal arity")
    better = False
    for x, y, s in zip(a, b, signs):
        if s == MAX:
            x, y = -x, -y
        if x > y:
            return False
        if x < y:
            better = True
    return better


def weakly_dominates(a: Sequence[float], b: Sequence[float], signs: Sequence[str], eps: float = 0.0) -> bool:
    """True when ``a`` is no worse than ``b`` on every axis, up to ``eps``."""
    if not len(a) == len(b) == len(signs):
        raise ValueError("dominance needs tuples and signs of equal arity")
    return all((x >= y - eps) if s == MAX else (x <= y + eps) for x, y, s in zip(a, b, signs))


def pareto_filter(points: Sequence[Sequence[float]] | np.ndarray, signs: Sequence[str]) -> list[int]:
    """Indices of the non-dominated points, in increasing order.

    Points are swept in lexicographic order; any dominator of a point precedes
    it, so each point only needs checking against the front found so far.
    """
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        return []
    f = _to_min(pts.reshape(len(pts), -1), signs)
    order = np.lexsort(f.T[::-1])
    front: list[int] = []
    archive = np.empty((0, f.shape[1]))
    for k in order:
        p = f[k]
        if archive.shape[0]:
            le = np.all(archive <= p, axis=1)
            lt = np.any(archive < p, axis=1)
            if np.any(le & lt):
                continue
        front.append(int(k))
        archive = np.vstack([archive, p])
    return sorted(front)


def _dominance_matrix(f: np.ndarray, violation: np.ndarray) -> np.ndarray:
    """``dom[i, j]`` under constraint-domination; ``f`` is in minimization form."""
    le = np.all(f[:, None, :] <= f[None, :, :], axis=2)
    lt = np.any(f[:, None, :] < f[None, :, :], axis=2)
    feas = violation <= 0
    fi, fj = feas[:, None], feas[None, :]
    dom = (le & lt) & fi & fj
    dom |= fi & ~fj
    dom |= ~fi & ~fj & (violation[:, None] < violation[None, :])
    return dom


def nondominated_ranks(f: np.ndarray, violation: np.ndarray | None = None) -> np.ndarray:
    """Front index of each point (0 is the best front)."""
    n = f.shape[0]
    violation = np.zeros(n) if violation is None else np.asarray(violation, float)
    dom = _dominance_matrix(f, violation)
    count = dom.sum(axis=0).astype(np.int64)
    rank = np.full(n, -1)
    current = np.flatnonzero(count == 0)
    r = 0
    while current.size:
        rank[current] = r
        count -= dom[current].sum(axis=0)
        count[rank >= 0] = -1
        current = np.flatnonzero(count == 0)
        r += 1
    return rank


def crowding_distance(f: np.ndarray) -> np.ndarray:
    """Crowding distance of points in one front."""
    n, m = f.shape
    dist = np.zeros(n)
    if n <= 2:
        return np.full(n, np.inf)
    for k in range(m):
        order = np.argsort(f[:, k], kind="stable")
        vals = f[order, k]
        span = vals[-1] - vals[0]
        dist[order[0]] = dist[order[-1]] = np.inf
        if span > 0:
            dist[order[1:-1]] += (vals[2:] - vals[:-2]) / span
    return dist


@dataclass(frozen=True)
class Nsga2Config:
    population: int = 300
    generations: int = 1000
    crossover_prob: float = 0.9
    mutation_prob: float | None = None  # per gene; None means 1 / genome length
    eta_crossover: float = 15.0
    eta_mutation: float = 20.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.population < 4 or self.population % 2:
            raise ValueError("population must be an even number of at least 4")
        if self.generations < 0:
            raise ValueError("generations must be non-negative")
        if not 0 <= self.crossover_prob <= 1:
            raise ValueError("crossover_prob must lie in [0, 1]")


def _sbx(p1, p2, lo, hi, eta, pc, rng):
    """Bounded simulated binary crossover on parent arrays of shape (n, d)."""
    c1, c2 = p1.copy(), p2.copy()
    n, d = p1.shape
    do_pair = rng.random(n) < pc
    do_gene = rng.random((n, d)) < 0.5
    span = hi - lo
    diff = np.abs(p1 - p2)
    mask = do_pair[:, None] & do_gene & (diff > 1e-14) & (span > 0)
    y1 = np.minimum(p1, p2)
    y2 = np.maximum(p1, p2)
    u = rng.random((n, d))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        safe = np.where(mask, y2 - y1, 1.0)

        def betaq(beta):
            alpha = 2.0 - beta ** -(eta + 1.0)
            return np.where(
                u <= 1.0 / alpha,
                (u * alpha) ** (1.0 / (eta + 1.0)),
                (1.0 / (2.0 - u * alpha)) ** (1.0 / (eta + 1.0)),
            )

        b1 = betaq(1.0 + 2.0 * (y1 - lo) / safe)
        b2 = betaq(1.0 + 2.0 * (hi - y2) / safe)
        x1 = np.clip(0.5 * ((y1 + y2) - b1 * (y2 - y1)), lo, hi)
        x2 = np.clip(0.5 * ((y1 + y2) + b2 * (y2 - y1)), lo, hi)
    swap = rng.random((n, d)) < 0.5
    x1, x2 = np.where(swap, x2, x1), np.where(swap, x1, x2)
    c1 = np.where(mask, x1, c1)
    c2 = np.where(mask, x2, c2)
    return c1, c2


def _polynomial_mutation(y, lo, hi, eta, pm, rng):
    n, d = y.shape
    span = hi - lo
    mask = (rng.random((n, d)) < pm) & (span > 0)
    u = rng.random((n, d))
    safe_span = np.where(span > 0, span, 1.0)
    d1 = (y - lo) / safe_span
    d2 = (hi - y) / safe_span
    power = 1.0 / (eta + 1.0)
    low = u < 0.5
    val_lo = 2.0 * u + (1.0 - 2.0 * u) * (1.0 - d1) ** (eta + 1.0)
    val_hi = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - d2) ** (eta + 1.0)
    with np.errstate(invalid="ignore"):
        deltaq = np.where(low, val_lo**power - 1.0, 1.0 - val_hi**power)
    out = np.clip(y + deltaq * span, lo, hi)
    return np.where(mask, out, y)


def _tournament(rank, crowd, count, rng):
    a = rng.integers(0, rank.size, count)
    b = rng.integers(0, rank.size, count)
    a_wins = (rank[a] < rank[b]) | ((rank[a] == rank[b]) & (crowd[a] > crowd[b]))
    tie = (rank[a] == rank[b]) & (crowd[a] == crowd[b])
    coin = rng.random(count) < 0.5
    return np.where(a_wins | (tie & coin), a, b)


def _survivors(f_min, violation, size):
    rank = nondominated_ranks(f_min, violation)
    crowd = np.zeros(rank.size)
    chosen: list[np.ndarray] = []
    filled = 0
    for r in range(rank.max() + 1):
        members = np.flatnonzero(rank == r)
        cd = crowding_distance(f_min[members])
        crowd[members] = cd
        if filled + members.size <= size:
            chosen.append(members)
            filled += members.size
        else:
            order = np.argsort(-cd, kind="stable")
            chosen.append(members[order[: size - filled]])
            filled = size
        if filled == size:
            break
    keep = np.concatenate(chosen)
    return keep, rank[keep], crowd[keep]


def analytic_evaluator(case: StudyCase, channel: ChannelParams) -> Evaluator:
    """Evaluator returning ``(f_C, f_D, f_E)`` and constraint violation."""

    def run(genomes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        obj, viol = evaluate_population(genomes, case, channel)
        return obj[:, [0, 2, 3]], viol

    return run


@dataclass(frozen=True)
class BoundEntry:
    solution: Solution
    objectives: tuple[float, ...]
    criteria: ObjectiveVector


@dataclass(frozen=True)
class ParetoBound:
    """A set of solutions with one objective tuple each.

    Attributes:
        kind: One of ``KINDS``.
        case: Study case of every entry.
        entries: Solutions with their objective tuples and full criteria.
        signs: Per-axis ``"max"`` or ``"min"``.
        skipped: Indices of source entries left out (zero denominators).
    """

    kind: str
    case: StudyCase
    entries: tuple[BoundEntry, ...]
    signs: tuple[str, ...]
    skipped: tuple[int, ...] = ()

    def points(self) -> np.ndarray:
        if not self.entries:
            return np.empty((0, len(self.signs)))
        return np.array([e.objectives for e in self.entries], dtype=float)

    def __len__(self) -> int:
        return len(self.entries)


def _dedup(f: np.ndarray, resolution: float) -> np.ndarray:
    keys = np.round(f / resolution).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return np.sort(first)


def nsga2(
    case: StudyCase | int,
    config: Nsga2Config | None = None,
    evaluator: Evaluator | None = None,
    channel: ChannelParams | None = None,
    bounds: tuple[np.ndarray, np.ndarray] | None = None,
    on_generation: Callable[[int, np.ndarray, np.ndarray], None] | None = None,
) -> ParetoBound:
    """Search the non-dominated set over (max f_C, min f_D, min f_E).

    Args:
        case: Study case.
        config: Algorithm settings.
        evaluator: Maps a genome batch to ``(objectives, violation)``;
            defaults to the closed-form criteria.
        channel: Channel parameters; its ``d_sd`` fixes the search square.
        bounds: Optional genome bounds replacing the default search square.
        on_generation: Called with ``(generation, genomes, objectives)`` of the
            feasible first front after each generation.

    Returns:
        The B_opt bound: the deduplicated feasible first front of the final
        population.
    """
    case = get_case(case)
    config = config or Nsga2Config()
    channel = channel or default_channel()
    evaluator = evaluator or analytic_evaluator(case, channel)
    lo, hi = bounds if bounds is not None else genome_bounds(case, channel.d_sd)
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    d = lo.size
    pm = config.mutation_prob if config.mutation_prob is not None else 1.0 / d
    rng = np.random.default_rng(config.seed)
    n = config.population

    pop = lo + rng.random((n, d)) * (hi - lo)
    obj, viol = evaluator(pop)
    keep, rank, crowd = _survivors(_to_min(obj, OPT_SIGNS), viol, n)
    pop, obj, viol = pop[keep], obj[keep], viol[keep]

    for gen in range(config.generations):
        parents = _tournament(rank, crowd, n, rng)
        p1, p2 = pop[parents[0::2]], pop[parents[1::2]]
        c1, c2 = _sbx(p1, p2, lo, hi, config.eta_crossover, config.crossover_prob, rng)
        children = _polynomial_mutation(np.vstack([c1, c2]), lo, hi, config.eta_mutation, pm, rng)
        c_obj, c_viol = evaluator(children)
        pop = np.vstack([pop, children])
        obj = np.vstack([obj, c_obj])
        viol = np.concatenate([viol, c_viol])
        f_min = _to_min(obj, OPT_SIGNS)
        keep, rank, crowd = _survivors(f_min, viol, n)
        pop, obj, viol = pop[keep], obj[keep], viol[keep]
        if on_generation is not None:
            first = (rank == 0) & (viol <= 0)
            on_generation(gen, pop[first], obj[first])

    first = np.flatnonzero((rank == 0) & (viol <= 0))
    first = first[_dedup(obj[first], DEDUP_RESOLUTION)]
    entries = []
    for k in first:
        sol = decode_genome(pop[k], case, channel)
        crit = evaluate(sol)
        entries.append(BoundEntry(sol, crit.as_tuple(), crit))
    entries.sort(key=lambda e: (-e.objectives[0], e.objectives[1], e.objectives[2]))
    return ParetoBound("B_opt", case, tuple(entries), OPT_SIGNS)


def bound_from_solutions(solutions: Iterable[Solution], filter_front: bool = True) -> ParetoBound:
    """B_opt style bound from already decoded solutions."""
    sols = list(solutions)
    if not sols:
        raise ValueError("no solutions given")
    entries = []
    for s in sols:
        crit = evaluate(s)
        entries.append(BoundEntry(s, crit.as_tuple(), crit))
    if filter_front:
        idx = pareto_filter([e.objectives for e in entries], OPT_SIGNS)
        entries = [entries[k] for k in idx]
    return ParetoBound("B_opt", sols[0].case, tuple(entries), OPT_SIGNS)


def with_reliability(b_opt: ParetoBound, f_r: Sequence[float]) -> ParetoBound:
    """Attach externally estimated reliability to every entry."""
    if len(f_r) != len(b_opt.entries):
        raise ValueError("one reliability value per entry is required")
    entries = tuple(
        replace(e, criteria=replace(e.criteria, f_R=float(r), f_R_available=True))
        for e, r in zip(b_opt.entries, f_r)
    )
    return replace(b_opt, entries=entries)


def derive_bounds(b_opt: ParetoBound, capacity_only: bool = False) -> dict[str, ParetoBound]:
    """Capacity- and reliability-achieving bounds and their Pareto filters.

    Args:
        b_opt: The B_opt bound.
        capacity_only: Return only ``B_c`` and ``B_c_opt``, which do not need
            reliability.

    Raises:
        ValueError: If an entry has no reliability value and ``capacity_only``
            is false (case 4 needs the simulator's estimate through
            ``with_reliability`` first).
    """
    c_entries, c_skip, r_entries, r_skip = [], [], [], []
    for k, e in enumerate(b_opt.entries):
        crit = e.criteria
        if not crit.f_R_available and not capacity_only:
            raise ValueError("reliability unavailable; attach simulated values first")
        der = derived_criteria(crit)
        if math.isfinite(der.fc_D) and math.isfinite(der.fc_E):
            c_entries.append(BoundEntry(e.solution, (der.fc_D, der.fc_E), crit))
        else:
            c_skip.append(k)
        if math.isfinite(der.fr_D) and math.isfinite(der.fr_E):
            r_entries.append(BoundEntry(e.solution, (der.fr_D, der.fr_E), crit))
        else:
            r_skip.append(k)
    b_c = ParetoBound("B_c", b_opt.case, tuple(c_entries), BOUND_SIGNS, tuple(c_skip))
    b_r = ParetoBound("B_r", b_opt.case, tuple(r_entries), BOUND_SIGNS, tuple(r_skip))

    def opt(bound: ParetoBound, kind: str) -> ParetoBound:
        idx = pareto_filter(bound.points(), BOUND_SIGNS) if bound.entries else []
        entries = sorted((bound.entries[k] for k in idx), key=lambda e: e.objectives)
        return ParetoBound(kind, bound.case, tuple(entries), BOUND_SIGNS, bound.skipped)

    out = {"B_c": b_c, "B_c_opt": opt(b_c, "B_c_opt")}
    if not capacity_only:
        out.update(B_r=b_r, B_r_opt=opt(b_r, "B_r_opt"))
    return out


AXIS_NAMES = {
    "B_opt": ("f_C", "f_D", "f_E"),
    "B_c": ("fc_D", "fc_E"),
    "B_c_opt": ("fc_D", "fc_E"),
    "B_r": ("fr_D", "fr_E"),
    "B_r_opt": ("fr_D", "fr_E"),
}


def bound_rows(bound: ParetoBound) -> list[dict[str, object]]:
    """Flat rows: entry index, solution record, criteria and bound axes."""
    rows = []
    for k, e in enumerate(bound.entries):
        row: dict[str, object] = {"entry": k}
        row.update(e.solution.to_record())
        c = e.criteria
        row.update(f_C=c.f_C, f_R=c.f_R, f_D=c.f_D, f_E=c.f_E, f_R_available=int(c.f_R_available))
        for name, val in zip(AXIS_NAMES[bound.kind], e.objectives):
            row[f"bound_{name}"] = val
        rows.append(row)
    return rows


def _fmt(v: object) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_bound_csv(bound: ParetoBound, path: str | Path, header: Mapping[str, object] | None = None) -> Path:
    """Write a bound as CSV preceded by ``# key=value`` header lines."""
    path = Path(path)
    rows = bound_rows(bound)
    buf = io.StringIO()
    meta = {"kind": bound.kind, "case": bound.case.id, **(header or {})}
    for key, val in meta.items():
        buf.write(f"# {key}={val}\n")
    if bound.skipped:
        buf.write(f"# skipped={','.join(map(str, bound.skipped))}\n")
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})
    path.write_text(buf.getvalue())
    return path


def write_bound_json(bound: ParetoBound, path: str | Path, header: Mapping[str, object] | None = None) -> Path:
    path = Path(path)
    doc = {
        "kind": bound.kind,
        "case": bound.case.id,
        "signs": list(bound.signs),
        "skipped": list(bound.skipped),
        "meta": dict(header or {}),
        "entries": bound_rows(bound),
    }
    path.write_text(json.dumps(doc, indent=1, allow_nan=True) + "\n")
    return path


def read_csv_with_header(path: str | Path) -> tuple[dict[str, str], list[dict[str, str]]]:
    lines = Path(path).read_text().splitlines()
    meta = {}
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            meta[key] = val
        else:
            body.append(line)
    return meta, list(csv.DictReader(body))


def read_bound_csv(path: str | Path, channel: ChannelParams | None = None) -> ParetoBound:
    """Load a bound written by ``write_bound_csv``; solutions are re-decoded."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"bound file not found: {path}")
    meta, rows = read_csv_with_header(path)
    kind = meta.get("kind", "B_opt")
    case = get_case(int(meta["case"]))
    entries = []
    for row in rows:
        sol = solution_from_record(row, channel)
        crit = ObjectiveVector(
            float(row["f_C"]), float(row["f_R"]), float(row["f_D"]), float(row["f_E"]),
            bool(int(row["f_R_available"])),
        )
        objs = tuple(float(row[f"bound_{n}"]) for n in AXIS_NAMES[kind])
        entries.append(BoundEntry(sol, objs, crit))
    skipped = tuple(int(k) for k in meta["skipped"].split(",")) if meta.get("skipped") else ()
    signs = OPT_SIGNS if kind == "B_opt" else BOUND_SIGNS
    return ParetoBound(kind, case, tuple(entries), signs, skipped)
