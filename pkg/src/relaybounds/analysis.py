"""Distances between bounds, set dominance between bounds and report tables."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .pareto import ParetoBound, dominates, read_bound_csv, weakly_dominates

NEAREST, IDENTITY = "nearest", "identity"


@dataclass(frozen=True)
class GapReport:
    """Distance of a lower point set to an upper point set.

    Attributes:
        gd: Generational distance ``sqrt(sum d_i**2) / N``.
        distances: Euclidean distance of each lower point to its partner.
        partners: Index in the upper set paired with each lower point.
        rmse: Per-axis relative RMSE between paired points.
        scales: Per-axis spread (max - min) of the upper set.
        skipped: Lower points left out (non-finite coordinates).
    """

    gd: float
    distances: tuple[float, ...]
    partners: tuple[int, ...]
    rmse: tuple[float, ...]
    scales: tuple[float, ...]
    skipped: tuple[int, ...] = ()


def _points(obj: ParetoBound | Sequence[Sequence[float]] | np.ndarray) -> np.ndarray:
    if isinstance(obj, ParetoBound):
        return obj.points()
    pts = np.asarray(obj, dtype=float)
    return pts.reshape(len(pts), -1) if pts.size else pts.reshape(0, 0)


def generational_distance(
    lower: ParetoBound | Sequence[Sequence[float]] | np.ndarray,
    upper: ParetoBound | Sequence[Sequence[float]] | np.ndarray,
    pairing: str = NEAREST,
) -> GapReport:
    """Generational distance from ``lower`` to ``upper``.

    Args:
        lower: Points of the approximating set.
        upper: Points of the reference set.
        pairing: ``"nearest"`` pairs each lower point with its closest upper
            point; ``"identity"`` pairs them by position and needs equal sizes.

    Raises:
        ValueError: On an empty set, mismatched arity, or identity pairing of
            sets with different sizes.
    """
    lo, up = _points(lower), _points(upper)
    if lo.size == 0 or up.size == 0:
        raise ValueError("generational distance needs two non-empty sets")
    if lo.shape[1] != up.shape[1]:
        raise ValueError("point sets have different arity")
    finite = np.all(np.isfinite(lo), axis=1)
    skipped = tuple(int(k) for k in np.flatnonzero(~finite))
    if pairing == IDENTITY:
        if len(lo) != len(up):
            raise ValueError("identity pairing needs sets of equal size")
        partners = np.arange(len(lo))
    elif pairing == NEAREST:
        d2 = ((lo[:, None, :] - up[None, :, :]) ** 2).sum(axis=2)
        partners = np.argmin(np.where(np.isfinite(d2), d2, np.inf), axis=1)
    else:
        raise ValueError(f"unknown pairing {pairing!r}")
    keep = np.flatnonzero(finite)
    if keep.size == 0:
        raise ValueError("no finite points in the lower set")
    diff = lo[keep] - up[partners[keep]]
    dist = np.sqrt((diff**2).sum(axis=1))
    n = keep.size
    gd = float(math.sqrt(float((dist**2).sum())) / n)
    with np.errstate(all="ignore"):
        rel = np.where(up[partners[keep]] != 0, diff / up[partners[keep]], 0.0)
        rmse = tuple(float(math.sqrt(float((rel[:, k] ** 2).sum())) / n) for k in range(lo.shape[1]))
    scales = tuple(float(up[:, k].max() - up[:, k].min()) for k in range(up.shape[1]))
    all_dist = np.full(len(lo), math.nan)
    all_dist[keep] = dist
    return GapReport(gd, tuple(map(float, all_dist)), tuple(map(int, partners)), rmse, scales, skipped)


def set_dominates(a: ParetoBound | np.ndarray, b: ParetoBound | np.ndarray,
                  signs: Sequence[str] | None = None, eps: float = 0.0) -> bool:
    """True when bound ``a`` dominates bound ``b``.

    Every point of ``b`` must be weakly dominated by some point of ``a`` (up to
    ``eps``), and at least one point of ``b`` strictly dominated.
    """
    if signs is None:
        if not isinstance(a, ParetoBound):
            raise ValueError("signs are required for raw point sets")
        signs = a.signs
    pa, pb = _points(a), _points(b)
    if pa.size == 0 or pb.size == 0:
        return False
    covered = all(any(weakly_dominates(p, q, signs, eps) for p in pa) for q in pb)
    if not covered:
        return False
    return any(any(dominates(p, q, signs) for p in pa) for q in pb)


def bound_label(case_id: int, d_sd: float = 620.0) -> str:
    """File stem prefix of a case: ``sc1`` at the default distance, ``sc1d310`` otherwise."""
    return f"sc{case_id}" if d_sd == 620.0 else f"sc{case_id}d{d_sd:g}"


def bound_path(directory: str | Path, label: str, kind: str) -> Path:
    return Path(directory) / f"{label}_{kind}.csv"


def load_bounds(directory: str | Path, labels: Sequence[str], kind: str) -> dict[str, ParetoBound]:
    """Read one bound kind for several cases.

    Raises:
        FileNotFoundError: Naming the case whose file is missing.
    """
    out = {}
    for label in labels:
        path = bound_path(directory, label, kind)
        if not path.exists():
            raise FileNotFoundError(f"no {kind} bound for {label}: {path} is missing")
        out[label] = read_bound_csv(path)
    return out


@dataclass(frozen=True)
class Comparison:
    first: str
    second: str
    kind: str
    first_dominates: bool
    second_dominates: bool


def compare_bounds(bounds: Mapping[str, ParetoBound], eps: float = 0.0) -> list[Comparison]:
    """Pairwise set dominance between bounds of the same kind."""
    labels = list(bounds)
    out = []
    for k, a in enumerate(labels):
        for b in labels[k + 1:]:
            ba, bb = bounds[a], bounds[b]
            if ba.kind != bb.kind:
                raise ValueError(f"cannot compare {ba.kind} with {bb.kind}")
            out.append(Comparison(a, b, ba.kind, set_dominates(ba, bb, eps=eps), set_dominates(bb, ba, eps=eps)))
    return out


def markdown_table(header: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    def cell(v: object) -> str:
        if isinstance(v, float):
            return f"{v:.6g}"
        return str(v)

    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(cell(v) for v in r) + " |" for r in rows]
    return "\n".join(lines)


def comparison_table(comparisons: Sequence[Comparison]) -> str:
    rows = []
    for c in comparisons:
        if c.first_dominates:
            verdict = f"{c.first} dominates"
        elif c.second_dominates:
            verdict = f"{c.second} dominates"
        else:
            verdict = "neither"
        rows.append((c.kind, c.first, c.second, verdict))
    return markdown_table(("kind", "first", "second", "relation"), rows)


def extent(bound: ParetoBound) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis minimum and maximum of a bound's points."""
    pts = bound.points()
    return pts.min(axis=0), pts.max(axis=0)


def nearest_point(bound: ParetoBound, target: Sequence[float]) -> tuple[np.ndarray, float]:
    """Point of ``bound`` closest to ``target`` in the max-norm, with that distance."""
    pts = bound.points()
    gap = np.abs(pts - np.asarray(target, float)).max(axis=1)
    k = int(np.argmin(gap))
    return pts[k], float(gap[k])


ACTIVE_RATE = 0.01  # a relay emitting less than this per frame counts as inactive


def active_relays(bound: ParetoBound) -> list[int]:
    """Number of relays with a total emission rate of at least ``ACTIVE_RATE``, per entry."""
    out = []
    for e in bound.entries:
        sol = e.solution
        out.append(sum(1 for r in sol.case.relays if float(sol.tau[r].sum()) >= ACTIVE_RATE))
    return out


@dataclass(frozen=True)
class LandmarkCheck:
    """Outcome of one landmark test on a bound file."""

    label: str
    kind: str
    description: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class Landmark:
    """Expected point of a bound, within ``tol`` on every axis.

    ``kind == "B_opt"`` checks the maximum capacity entry; the other kinds check
    the closest point of the bound.
    """

    label: str
    kind: str
    target: tuple[float, ...]
    tol: float

    def check(self, bound: ParetoBound, scale: float = 1.0) -> LandmarkCheck:
        tol = self.tol * scale
        if not bound.entries:
            return LandmarkCheck(self.label, self.kind, str(self.target), False, "empty bound")
        if self.kind == "B_opt":
            pts = bound.points()
            point = pts[int(np.argmax(pts[:, 0]))]
            gap = float(np.abs(point - np.asarray(self.target)).max())
        else:
            point, gap = nearest_point(bound, self.target)
        lo, hi = extent(bound)
        detail = (f"point {tuple(round(float(v), 4) for v in point)} off by {gap:.4f} (tol {tol}); "
                  f"bound spans {tuple(round(float(v), 4) for v in lo)} to "
                  f"{tuple(round(float(v), 4) for v in hi)}")
        return LandmarkCheck(self.label, self.kind, f"near {self.target}", gap <= tol, detail)


LANDMARKS = (
    Landmark("sc1", "B_opt", (0.25, 2.0, 1.5), 0.01),
    Landmark("sc1d310", "B_c_opt", (1.5, 1.5), 0.05),
    Landmark("sc1d310", "B_r_opt", (2.0, 2.0), 0.05),
    Landmark("sc2d310", "B_c_opt", (1.98, 1.98), 0.05),
    Landmark("sc3", "B_c_opt", (3.93, 3.93), 0.1),
)


def check_single_relay_use(label: str, b_opt: ParetoBound) -> LandmarkCheck:
    """Landmark: no front entry keeps both relays active."""
    counts = active_relays(b_opt)
    both = [k for k, c in enumerate(counts) if c >= 2]
    best = max((b_opt.entries[k].criteria.f_C for k in both), default=None)
    detail = f"{len(both)} of {len(counts)} entries use two relays"
    if best is not None:
        detail += f" (best capacity among them {best:.4f})"
    return LandmarkCheck(label, "B_opt", "no two-active-relay solution", not both, detail)


def check_landmarks(bounds: Mapping[tuple[str, str], ParetoBound], scale: float = 1.0) -> list[LandmarkCheck]:
    """Run every landmark whose bound is present in ``bounds`` (keyed by label and kind)."""
    out = [lm.check(bounds[(lm.label, lm.kind)], scale) for lm in LANDMARKS if (lm.label, lm.kind) in bounds]
    if ("sc5", "B_opt") in bounds:
        out.append(check_single_relay_use("sc5", bounds[("sc5", "B_opt")]))
    return out
