"""Discrete-event simulator for just-in-time aggregation of federated learning rounds."""

from .model import (FLJobSpec, FusionKind, GlobalModel, ModelUpdate, PartialAggregate,
                    PartyProfile, finalize, fuse_pair, lift)
from .estimator import ClusterConfig, estimate_round, fit_linear
from .scenarios import Scenario, build_scenario, six_party_scenario, generate_parties
from .simkernel import SimTrace, run
from .strategies import StrategyKind

__version__ = "0.1.0"

__all__ = [
    "FLJobSpec", "FusionKind", "GlobalModel", "ModelUpdate", "PartialAggregate", "PartyProfile",
    "finalize", "fuse_pair", "lift", "ClusterConfig", "estimate_round", "fit_linear", "Scenario",
    "build_scenario", "six_party_scenario", "generate_parties", "SimTrace", "run", "StrategyKind",
]
