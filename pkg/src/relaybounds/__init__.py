"""Multi-objective performance bounds for probabilistic relay forwarding."""

from .analysis import generational_distance, set_dominates
from .channel import ChannelParams, calibrate, default_channel, link_success
from .coding import CodedConfig, Strategy, simulate_coded
from .criteria import ObjectiveVector, derived_criteria, evaluate, path_oracle
from .netmodel import Solution, decode_genome, get_case
from .pareto import Nsga2Config, ParetoBound, derive_bounds, nsga2, pareto_filter
from .simulator import SimConfig, rmse, simulate, simulate_seeds

__all__ = [
    "ChannelParams", "CodedConfig", "Nsga2Config", "ObjectiveVector", "ParetoBound", "SimConfig",
    "Solution", "Strategy", "calibrate", "decode_genome", "default_channel", "derive_bounds",
    "derived_criteria", "evaluate", "generational_distance", "get_case", "link_success", "nsga2",
    "pareto_filter", "path_oracle", "rmse", "set_dominates", "simulate", "simulate_coded",
    "simulate_seeds",
]
