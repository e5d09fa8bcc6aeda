"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 infeasible or diverging
input, 4 failed acceptance check (``report --check``).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .analysis import (
    LandmarkCheck,
    bound_label,
    check_landmarks,
    compare_bounds,
    comparison_table,
    extent,
    generational_distance,
    markdown_table,
)
from .channel import (
    ANCHOR_DISTANCE,
    FAR_DISTANCE,
    NEAR_DISTANCE,
    CalibrationError,
    ChannelParams,
    calibrate,
    link_success_array,
)
from .coding import CodingMetrics, DisconnectedError, mean_coding_metrics, simulate_coded
from .config import DEFAULTS, ConfigError, RunConfig, load_config
from .criteria import derived_criteria, evaluate, path_oracle
from .netmodel import DivergenceError, Solution, StructureError, decode_genome, get_case
from .pareto import (
    KINDS,
    OPT_SIGNS,
    BoundEntry,
    ParetoBound,
    derive_bounds,
    nsga2,
    read_bound_csv,
    read_csv_with_header,
    with_reliability,
    write_bound_csv,
)
from .simulator import SimMetrics, merge_metrics, rmse, simulate, simulate_seeds

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_CHECK = 0, 2, 3, 4
RMSE_LIMIT = 5e-3


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name and the exit code."""

    def __init__(self, stage: str, cause: BaseException, code: int):
        super().__init__(f"{stage} failed: {cause}")
        self.stage = stage
        self.code = code


def _map(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def resolve_channel(cfg: RunConfig) -> ChannelParams:
    channel = replace(cfg.channel, d_sd=cfg.d_sd)
    return calibrate(channel) if cfg.calibrate else channel


def _meta(cfg: RunConfig, channel: ChannelParams, **extra) -> dict[str, object]:
    return {
        "config_hash": cfg.digest(),
        "d_sd": f"{cfg.d_sd:g}",
        "noise_floor": repr(channel.noise_floor),
        "nsga_seed": cfg.nsga2.seed,
        "sim_seeds": ",".join(map(str, cfg.sim_seeds)),
        **extra,
    }


@dataclass(frozen=True)
class _SimJob:
    solution: Solution
    seeds: tuple[int, ...]
    cfg: object
    channel: ChannelParams

    def __call__(self) -> SimMetrics:
        return simulate_seeds(self.solution, self.seeds, self.cfg, self.channel)


def _run_job(job: Callable):
    return job()


SIM_COLUMNS = ("entry", "f_C", "f_D", "f_E", "f_R", "n_rx", "n_tx_source", "n_tx_relays",
               "n_distinct", "model_f_C", "model_f_D", "model_f_E", "model_f_R")


def sim_rows(bound: ParetoBound, sims: Sequence[SimMetrics]) -> list[dict[str, object]]:
    rows = []
    for k, (e, s) in enumerate(zip(bound.entries, sims)):
        c = e.criteria
        rows.append({
            "entry": k, "f_C": s.f_C, "f_D": s.f_D, "f_E": s.f_E, "f_R": s.f_R, "n_rx": s.n_rx,
            "n_tx_source": s.n_tx_source, "n_tx_relays": s.n_tx_relays, "n_distinct": s.n_distinct,
            "model_f_C": c.f_C, "model_f_D": c.f_D, "model_f_E": c.f_E,
            "model_f_R": c.f_R if c.f_R_available else math.nan,
        })
    return rows


def write_rows(path: Path | None, columns: Sequence[str], rows: Iterable[dict], meta: dict | None = None) -> str:
    buf = io.StringIO()
    for key, val in (meta or {}).items():
        buf.write(f"# {key}={val}\n")
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    text = buf.getvalue()
    if path is not None:
        path.write_text(text)
    return text


def run_pipeline(cfg: RunConfig, log: Callable[[str], None] = lambda s: None) -> Path:
    """Calibrate, optimize, simulate, derive bounds and write the report.

    Returns:
        The output directory holding ``<label>_<kind>.csv`` bounds,
        ``<label>_sim.csv`` and ``report.md``.

    Raises:
        StageError: Naming the failed stage.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    label = bound_label(cfg.study_case, cfg.d_sd)
    try:
        channel = resolve_channel(cfg)
    except CalibrationError as exc:
        raise StageError("calibrate", exc, EXIT_CONFIG) from exc
    log(f"calibrate: noise floor {channel.noise_floor:.6e}")
    try:
        b_opt = nsga2(cfg.study_case, cfg.nsga2, channel=channel)
    except (DivergenceError, ValueError) as exc:
        raise StageError("optimize", exc, EXIT_INFEASIBLE) from exc
    log(f"optimize: {len(b_opt)} non-dominated solutions")
    try:
        jobs = [_SimJob(e.solution, cfg.sim_seeds, cfg.sim, channel) for e in b_opt.entries]
        sims = _map(_run_job, jobs, cfg.jobs)
    except ValueError as exc:
        raise StageError("simulate", exc, EXIT_INFEASIBLE) from exc
    log(f"simulate: {len(sims)} solutions x {len(cfg.sim_seeds)} seeds")
    if any(not e.criteria.f_R_available for e in b_opt.entries):
        b_opt = with_reliability(b_opt, [s.f_R for s in sims])
    try:
        bounds = {"B_opt": b_opt, **derive_bounds(b_opt)}
    except ValueError as exc:
        raise StageError("derive_bounds", exc, EXIT_INFEASIBLE) from exc
    meta = _meta(cfg, channel)
    for kind in KINDS:
        write_bound_csv(bounds[kind], out / f"{label}_{kind}.csv", meta)
    write_rows(out / f"{label}_sim.csv", SIM_COLUMNS, sim_rows(b_opt, sims), {**meta, "case": cfg.study_case})
    try:
        build_report(out)
    except (ValueError, FileNotFoundError) as exc:
        raise StageError("report", exc, EXIT_CONFIG) from exc
    log(f"report: {out / 'report.md'}")
    return out


def _labels(directory: Path) -> list[str]:
    return sorted({p.name[: -len("_B_opt.csv")] for p in directory.glob("*_B_opt.csv")})


def _sim_rmse(path: Path) -> tuple[dict[str, float], int]:
    _, rows = read_csv_with_header(path)
    model = [[float(r[f"model_{a}"]) for a in ("f_C", "f_D", "f_E")] for r in rows]
    sims = [SimMetrics(float(r["f_C"]), float(r["f_D"]), float(r["f_E"]), float(r["f_R"]), {},
                       int(r["n_rx"]), int(r["n_tx_source"]), int(r["n_tx_relays"]), int(r["n_distinct"]), 0)
            for r in rows]
    res = rmse(model, sims)
    return res.values, len(rows)


@dataclass(frozen=True)
class Report:
    text: str
    checks: tuple[LandmarkCheck, ...]


def build_report(directory: str | Path, check_scale: float = 1.0) -> Report:
    """Summarize every bound in ``directory`` into ``report.md``.

    Landmark and RMSE checks are evaluated on whatever files are present.
    """
    directory = Path(directory)
    labels = _labels(directory)
    if not labels:
        raise FileNotFoundError(f"no *_B_opt.csv bounds in {directory}")
    bounds: dict[tuple[str, str], ParetoBound] = {}
    for label in labels:
        for kind in KINDS:
            path = directory / f"{label}_{kind}.csv"
            if path.exists():
                bounds[(label, kind)] = read_bound_csv(path)
    parts = ["# Performance bounds", ""]
    rows = []
    for label in labels:
        b = bounds[(label, "B_opt")]
        pts = b.points()
        best = pts[int(np.argmax(pts[:, 0]))] if len(pts) else (math.nan,) * 3
        rows.append((label, len(b), float(best[0]), float(best[1]), float(best[2])))
    parts += ["## Fronts", "", markdown_table(("case", "size", "max f_C", "f_D there", "f_E there"), rows), ""]
    rows = []
    for (label, kind), b in sorted(bounds.items()):
        if kind in ("B_c_opt", "B_r_opt") and len(b):
            lo, hi = extent(b)
            rows.append((label, kind, len(b), float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])))
    parts += ["## Optimal delay and energy bounds", "",
              markdown_table(("case", "kind", "size", "min D", "max D", "min E", "max E"), rows), ""]
    checks: list[LandmarkCheck] = list(check_landmarks(bounds, check_scale))
    rows = []
    for label in labels:
        path = directory / f"{label}_sim.csv"
        if path.exists():
            values, n = _sim_rmse(path)
            rows.append((label, n, values["f_C"], values["f_D"], values["f_E"]))
            ok = all(v <= RMSE_LIMIT for v in values.values())
            checks.append(LandmarkCheck(label, "sim", f"RMSE <= {RMSE_LIMIT}", ok,
                                        ", ".join(f"{k}={v:.2e}" for k, v in values.items())))
    if rows:
        parts += ["## Model against simulation (relative RMSE)", "",
                  markdown_table(("case", "N", "f_C", "f_D", "f_E"), rows), ""]
    for kind in ("B_c_opt", "B_r_opt"):
        group = {label: bounds[(label, kind)] for label in labels if (label, kind) in bounds and len(bounds[(label, kind)])}
        if len(group) > 1:
            parts += [f"## Dominance between {kind} bounds", "", comparison_table(compare_bounds(group)), ""]
    if checks:
        parts += ["## Checks", "", markdown_table(
            ("case", "bound", "expectation", "result", "detail"),
            [(c.label, c.kind, c.description, "pass" if c.passed else "FAIL", c.detail) for c in checks]), ""]
    text = "\n".join(parts)
    (directory / "report.md").write_text(text)
    return Report(text, tuple(checks))


# ---- subcommands -------------------------------------------------------


def _overrides(args: argparse.Namespace) -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = {"run": {}, "nsga2": {}, "simulator": {}, "coding": {}, "channel": {}}
    for item in getattr(args, "set", None) or []:
        key, sep, val = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        out.setdefault(section, {})[name] = val
    for attr, section, key in (("case", "run", "study_case"), ("d_sd", "run", "d_sd"), ("out", "run", "output_dir"),
                               ("jobs", "run", "jobs"), ("seed", "nsga2", "seed"),
                               ("population", "nsga2", "population"), ("generations", "nsga2", "generations"),
                               ("frames", "simulator", "frames"), ("seeds", "simulator", "seeds")):
        val = getattr(args, attr, None)
        if val is not None:
            out[section][key] = str(val)
    return out


def _config(args: argparse.Namespace) -> RunConfig:
    return load_config(args.config, _overrides(args))


def _genome(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise ConfigError(f"genome must be comma separated numbers: {exc}") from exc


def _solutions(args: argparse.Namespace, cfg: RunConfig, channel: ChannelParams) -> list[Solution]:
    if args.bound:
        return [e.solution for e in read_bound_csv(args.bound, channel).entries]
    if args.genome:
        case = get_case(cfg.study_case)
        g = _genome(args.genome)
        if g.size != case.genome_length:
            raise ConfigError(f"case {case.id} expects {case.genome_length} genes {case.genome_names}, got {g.size}")
        return [decode_genome(g, case, channel)]
    raise ConfigError("give --bound FILE or --genome VALUES")


def cmd_calibrate(args, cfg: RunConfig) -> int:
    channel = resolve_channel(cfg)
    print(f"noise_floor={channel.noise_floor!r}")
    for d in sorted({NEAR_DISTANCE, ANCHOR_DISTANCE, FAR_DISTANCE, cfg.d_sd}):
        print(f"p({d:g})={float(link_success_array(d, (), channel)):.6g}")
    return EXIT_OK


def cmd_channel_table(args, cfg: RunConfig) -> int:
    channel = resolve_channel(cfg)
    d = np.arange(args.start, args.stop + 1e-9, args.step)
    p = link_success_array(d, (), channel)
    rows = [{"distance": float(a), "success": float(b)} for a, b in zip(d, p)]
    text = write_rows(Path(args.output) if args.output else None, ("distance", "success"), rows,
                      {"noise_floor": repr(channel.noise_floor)})
    if not args.output:
        sys.stdout.write(text)
    return EXIT_OK


def _json_number(v: float) -> float | str | None:
    if math.isnan(v):
        return None
    if math.isinf(v):
        return "inf"
    return v


def cmd_evaluate(args, cfg: RunConfig) -> int:
    channel = resolve_channel(cfg)
    code = EXIT_OK
    for sol in _solutions(args, cfg, channel):
        crit = evaluate(sol)
        doc: dict[str, object] = {
            "solution": sol.to_record(),
            "feasible": sol.feasible,
            "violation": sol.violation,
            "objectives": {k: _json_number(v) if isinstance(v, float) else v for k, v in asdict(crit).items()},
            "derived": {k: _json_number(v) for k, v in asdict(derived_criteria(crit)).items()},
        }
        if args.oracle:
            o = path_oracle(sol, h_max=args.h_max)
            doc["oracle"] = {"h_max": args.h_max, "capacity": o.capacity, "delay_mass": o.delay_mass,
                             "energy": o.energy, "tail_capacity": o.tail_capacity,
                             "tail_delay_mass": o.tail_delay_mass, "tail_energy": o.tail_energy}
        print(json.dumps(doc, indent=1))
        if not sol.feasible:
            code = EXIT_INFEASIBLE
    return code


def cmd_optimize(args, cfg: RunConfig) -> int:
    channel = resolve_channel(cfg)
    b_opt = nsga2(cfg.study_case, cfg.nsga2, channel=channel)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    label = bound_label(cfg.study_case, cfg.d_sd)
    meta = _meta(cfg, channel)
    write_bound_csv(b_opt, out / f"{label}_B_opt.csv", meta)
    has_r = all(e.criteria.f_R_available for e in b_opt.entries)
    for kind, b in derive_bounds(b_opt, capacity_only=not has_r).items():
        write_bound_csv(b, out / f"{label}_{kind}.csv", meta)
    print(f"{len(b_opt)} solutions written to {out}")
    return EXIT_OK


def cmd_simulate(args, cfg: RunConfig) -> int:
    channel = resolve_channel(cfg)
    sols = _solutions(args, cfg, channel)
    if args.event_log:
        sims = []
        with open(args.event_log, "w") as fh:
            for k, sol in enumerate(sols):
                runs = []
                for seed in cfg.sim_seeds:
                    run = simulate(sol, None, replace(cfg.sim, seed=seed, event_log=True), channel)
                    fh.write(f"# entry={k} seed={seed}\n")
                    fh.writelines(f"{ev}\n" for ev in run.events or ())
                    runs.append(run)
                sims.append(merge_metrics(runs))
    else:
        sims = _map(_run_job, [_SimJob(s, cfg.sim_seeds, cfg.sim, channel) for s in sols], cfg.jobs)
    entries = []
    for sol in sols:
        crit = evaluate(sol)
        entries.append(BoundEntry(sol, crit.as_tuple(), crit))
    bound = ParetoBound("B_opt", sols[0].case, tuple(entries), OPT_SIGNS)
    text = write_rows(Path(args.output) if args.output else None, SIM_COLUMNS, sim_rows(bound, sims),
                      {**_meta(cfg, channel), "case": sols[0].case.id, "frames": cfg.sim.frames})
    if not args.output:
        sys.stdout.write(text)
    return EXIT_OK


CODING_COLUMNS = ("entry", "K", "strategy", "seed", "fc_D", "fc_E", "overhead_pct", "n_tx_source",
                  "n_tx_relays", "n_rx_before_decode", "excess", "model_fc_D", "model_fc_E")


@dataclass(frozen=True)
class _CodedJob:
    solution: Solution
    K: int
    strategy: str
    seed: int
    cfg: object
    channel: ChannelParams

    def __call__(self) -> CodingMetrics:
        return simulate_coded(self.solution, None, self.K, self.strategy, replace(self.cfg, seed=self.seed), self.channel)


def cmd_code_bench(args, cfg: RunConfig) -> int:
    channel = resolve_channel(cfg)
    bound = read_bound_csv(args.bound, channel)
    strategies = args.strategy or list(cfg.coding.strategies)
    ks = [int(k) for k in args.K.split(",")] if args.K else list(cfg.coding.K)
    n_seeds = args.runs or cfg.coding.seeds
    base = cfg.coding.coded_config(0, cfg.sim.interference_mode)
    rows, summary = [], []
    for strategy in strategies:
        for K in ks:
            jobs = [_CodedJob(e.solution, K, strategy, s, base, channel)
                    for e in bound.entries for s in range(n_seeds)]
            results = _map(_run_job, jobs, cfg.jobs)
            means = []
            for k, e in enumerate(bound.entries):
                runs = results[k * n_seeds:(k + 1) * n_seeds]
                mean = mean_coding_metrics(runs)
                means.append(mean)
                model = e.objectives if bound.kind in ("B_c", "B_c_opt") else (math.nan, math.nan)
                for seed, m in list(enumerate(runs)) + [("mean", mean)]:
                    rows.append({"entry": k, "K": K, "strategy": strategy, "seed": seed, "fc_D": m.fc_D,
                                 "fc_E": m.fc_E, "overhead_pct": m.overhead_pct, "n_tx_source": m.n_tx_source,
                                 "n_tx_relays": m.n_tx_relays, "n_rx_before_decode": m.n_rx_before_decode,
                                 "excess": m.excess, "model_fc_D": model[0], "model_fc_E": model[1]})
            if bound.kind in ("B_c", "B_c_opt"):
                gap = generational_distance([(m.fc_D, m.fc_E) for m in means], bound, pairing="identity")
                overhead = sum(m.overhead_pct for m in means) / len(means)
                summary.append(f"{strategy} K={K}: GD={gap.gd:.4f} overhead={overhead:.3f}%")
    text = write_rows(Path(args.output) if args.output else None, CODING_COLUMNS, rows,
                      {**_meta(cfg, channel), "bound": Path(args.bound).name, "runs": n_seeds})
    if not args.output:
        sys.stdout.write(text)
    for line in summary:
        print(line, file=sys.stderr)
    return EXIT_OK


def cmd_report(args, cfg: RunConfig) -> int:
    report = build_report(args.dir or cfg.output_dir, 2.0 if args.ci else 1.0)
    print(report.text)
    if args.check and not all(c.passed for c in report.checks):
        return EXIT_CHECK
    return EXIT_OK


def cmd_run(args, cfg: RunConfig) -> int:
    out = run_pipeline(cfg, log=lambda s: print(s, file=sys.stderr))
    print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relaybounds", description=__doc__.splitlines()[0])
    parser.add_argument("--print-defaults", action="store_true", help="print the default config and exit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file layered over the defaults")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one setting")
    common.add_argument("--case", type=int, help="study case 1..5")
    common.add_argument("--d-sd", dest="d_sd", type=float, help="source to destination distance (m)")
    common.add_argument("--jobs", type=int, help="worker processes")
    sub = parser.add_subparsers(dest="command")

    sub.add_parser("calibrate", parents=[common], help="solve the noise floor and print anchor links")

    p = sub.add_parser("channel-table", parents=[common], help="interference-free success against distance")
    p.add_argument("--start", type=float, default=10.0)
    p.add_argument("--stop", type=float, default=700.0)
    p.add_argument("--step", type=float, default=10.0)
    p.add_argument("--output")

    p = sub.add_parser("evaluate", parents=[common], help="closed-form criteria of solutions")
    p.add_argument("--genome", help="comma separated relay positions then free forwarding probabilities")
    p.add_argument("--bound", help="bound CSV whose solutions are evaluated")
    p.add_argument("--oracle", action="store_true", help="also print the path enumeration")
    p.add_argument("--h-max", dest="h_max", type=int, default=400)

    p = sub.add_parser("optimize", parents=[common], help="NSGA-II search, writes B_opt and derived bounds")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--population", type=int)
    p.add_argument("--generations", type=int)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo criteria of solutions")
    p.add_argument("--genome")
    p.add_argument("--bound")
    p.add_argument("--frames", type=int)
    p.add_argument("--seeds", help="comma separated seeds")
    p.add_argument("--event-log", dest="event_log", help="write a per-event trace to this file")
    p.add_argument("--output")

    p = sub.add_parser("code-bench", parents=[common], help="coded transfers over a bound's solutions")
    p.add_argument("--bound", required=True)
    p.add_argument("--strategy", action="append", choices=["none", "rxor", "rlnc"])
    p.add_argument("--K", help="comma separated code dimensions")
    p.add_argument("--runs", type=int, help="seeds per solution")
    p.add_argument("--output")

    p = sub.add_parser("report", parents=[common], help="summarize a directory of bounds")
    p.add_argument("--dir")
    p.add_argument("--check", action="store_true", help="exit 4 when a landmark or RMSE check fails")
    p.add_argument("--ci", action="store_true", help="double the landmark tolerances")

    p = sub.add_parser("run", parents=[common], help="calibrate, optimize, simulate, derive and report")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--population", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--seeds", help="comma separated simulation seeds")
    return parser


COMMANDS = {
    "calibrate": cmd_calibrate,
    "channel-table": cmd_channel_table,
    "evaluate": cmd_evaluate,
    "optimize": cmd_optimize,
    "simulate": cmd_simulate,
    "code-bench": cmd_code_bench,
    "report": cmd_report,
    "run": cmd_run,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_defaults:
        sys.stdout.write(DEFAULTS)
        return EXIT_OK
    if not args.command:
        parser.print_help()
        return EXIT_CONFIG
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, StructureError, CalibrationError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, DisconnectedError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
