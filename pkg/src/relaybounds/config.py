"""Run configuration: INI-style sections with every default embedded."""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .channel import ChannelParams
from .coding import CodedConfig, Strategy
from .netmodel import get_case
from .pareto import Nsga2Config
from .simulator import AVERAGED, REALIZED, SimConfig

DEFAULTS = """\
[run]
study_case = 1
d_sd = 620
output_dir = artifacts
jobs = 1

[channel]
tx_power = 0.15
pathloss_exponent = 3
# auto solves the noise floor against the anchor link
noise_floor = auto
packet_bits = 1024
success_floor = 1e-9

[nsga2]
population = 300
generations = 1000
crossover_prob = 0.9
# auto means one over the genome length
mutation_prob = auto
eta_crossover = 15
eta_mutation = 20
seed = 0

[simulator]
frames = 10000
seeds = 1,2,3,4,5
interference_mode = realized
# none keeps every scheduled packet
buffer_capacity = none
literal_forwarding = no

[coding]
strategies = rlnc
k = 100
seeds = 50
# auto picks 8 for rxor and K for rlnc
memory = auto
packet_bits = 20480
"""


class ConfigError(ValueError):
    """Invalid configuration value."""


@dataclass(frozen=True)
class CodingSettings:
    strategies: tuple[str, ...] = (Strategy.RLNC.value,)
    K: tuple[int, ...] = (100,)
    seeds: int = 50
    memory: int | None = None
    packet_bits: int = 20480

    def coded_config(self, seed: int, interference_mode: str = REALIZED) -> CodedConfig:
        return CodedConfig(seed=seed, memory=self.memory, packet_bits=self.packet_bits,
                           interference_mode=interference_mode)


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run depends on."""

    study_case: int = 1
    d_sd: float = 620.0
    output_dir: Path = Path("artifacts")
    jobs: int = 1
    channel: ChannelParams = field(default_factory=ChannelParams)
    calibrate: bool = True
    nsga2: Nsga2Config = field(default_factory=Nsga2Config)
    sim: SimConfig = field(default_factory=SimConfig)
    sim_seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    coding: CodingSettings = field(default_factory=CodingSettings)

    def digest(self) -> str:
        """Short hash of every setting except the output directory and job count."""
        text = repr((self.study_case, self.d_sd, self.channel, self.calibrate, self.nsga2,
                     self.sim, self.sim_seeds, self.coding))
        return hashlib.sha256(text.encode()).hexdigest()[:12]


def _parser(text: str | None = None, path: str | Path | None = None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.read_string(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        known = {s: set(cp[s]) for s in cp.sections()}
        extra = configparser.ConfigParser(inline_comment_prefixes=("#",))
        extra.read(p)
        for section in extra.sections():
            if section not in known:
                raise ConfigError(f"unknown section [{section}]")
            for key in extra[section]:
                if key not in known[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
        cp.read(p)
    if text:
        cp.read_string(text)
    return cp


def _int_list(value: str) -> tuple[int, ...]:
    return tuple(int(v) for v in value.replace(" ", "").split(",") if v)


def load_config(path: str | Path | None = None, overrides: dict[str, dict[str, str]] | None = None) -> RunConfig:
    """Build a RunConfig from the defaults, an optional file and overrides.

    Raises:
        ConfigError: On unknown keys, unparsable values or values out of range.
    """
    cp = _parser(path=path)
    for section, items in (overrides or {}).items():
        for key, val in items.items():
            if val is not None:
                cp[section][key] = str(val)
    try:
        run, ch, ng, sm, cd = (cp[s] for s in ("run", "channel", "nsga2", "simulator", "coding"))
        case_id = run.getint("study_case")
        get_case(case_id)
        d_sd = run.getfloat("d_sd")
        noise = ch["noise_floor"].strip().lower()
        channel_kw = dict(
            tx_power=ch.getfloat("tx_power"),
            pathloss_exponent=ch.getfloat("pathloss_exponent"),
            packet_bits=ch.getint("packet_bits"),
            success_floor=ch.getfloat("success_floor"),
            d_sd=d_sd,
        )
        if noise != "auto":
            channel_kw["noise_floor"] = float(noise)
        channel = ChannelParams(**channel_kw)
        mut = ng["mutation_prob"].strip().lower()
        nsga = Nsga2Config(
            population=ng.getint("population"),
            generations=ng.getint("generations"),
            crossover_prob=ng.getfloat("crossover_prob"),
            mutation_prob=None if mut == "auto" else float(mut),
            eta_crossover=ng.getfloat("eta_crossover"),
            eta_mutation=ng.getfloat("eta_mutation"),
            seed=ng.getint("seed"),
        )
        cap = sm["buffer_capacity"].strip().lower()
        mode = sm["interference_mode"].strip().lower()
        if mode not in (REALIZED, AVERAGED):
            raise ConfigError(f"interference_mode must be {REALIZED} or {AVERAGED}")
        sim = SimConfig(
            frames=sm.getint("frames"),
            interference_mode=mode,
            buffer_capacity=None if cap == "none" else int(cap),
            literal_forwarding=sm.getboolean("literal_forwarding"),
        )
        seeds = _int_list(sm["seeds"])
        if not seeds:
            raise ConfigError("simulator seeds must not be empty")
        strategies = tuple(s.strip().lower() for s in cd["strategies"].split(",") if s.strip())
        for s in strategies:
            Strategy(s)
        mem = cd["memory"].strip().lower()
        coding = CodingSettings(
            strategies=strategies,
            K=_int_list(cd["k"]),
            seeds=cd.getint("seeds"),
            memory=None if mem == "auto" else int(mem),
            packet_bits=cd.getint("packet_bits"),
        )
        jobs = run.getint("jobs")
        if jobs < 1:
            raise ConfigError("jobs must be at least 1")
    except ConfigError:
        raise
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(
        study_case=case_id,
        d_sd=d_sd,
        output_dir=Path(run["output_dir"]),
        jobs=jobs,
        channel=channel,
        calibrate=noise == "auto",
        nsga2=nsga,
        sim=sim,
        sim_seeds=seeds,
        coding=coding,
    )


def with_overrides(cfg: RunConfig, **changes) -> RunConfig:
    names = {f.name for f in fields(RunConfig)}
    unknown = set(changes) - names
    if unknown:
        raise ConfigError(f"unknown settings: {sorted(unknown)}")
    return replace(cfg, **changes)
