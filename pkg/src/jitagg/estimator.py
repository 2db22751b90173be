"""Arrival-time and aggregation-time estimates used to place the JIT deadline."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .model import (EpochTime, EveryMinibatches, FLJobSpec, Hardware, MinibatchTime,
                    PartyProfile, PerEpoch)

BASELINE_VCPUS = 2


class ConfigError(ValueError):
    """Inconsistent job, party or cluster configuration."""


class DegenerateDesignError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterConfig:
    n_agg: int = 1
    cores_per_agg: int = 1
    bw_dc: float = 1.25e9
    t_pair: float = 0.05
    delta: float = 60.0
    deploy_overhead: float = 0.5
    checkpoint_overhead: float = 0.5
    preemption: bool = True

    def __post_init__(self):
        if self.n_agg < 1 or self.cores_per_agg < 1:
            raise ValueError("n_agg and cores_per_agg must be >= 1")
        if self.bw_dc <= 0 or self.t_pair <= 0 or self.delta <= 0:
            raise ValueError("bw_dc, t_pair and delta must be > 0")
        if self.deploy_overhead < 0 or self.checkpoint_overhead < 0:
            raise ValueError("overheads must be >= 0")


@dataclass(frozen=True)
class RegressionModel:
    slope: float
    intercept: float
    residual_rms: float
    n_points: int

    def __call__(self, x: float) -> float:
        return self.slope * x + self.intercept


@dataclass(frozen=True)
class EstimateSet:
    t_train: dict[str, float]
    t_comm: dict[str, float]
    t_upd: dict[str, float]
    t_rnd: float
    t_agg: float


def fit_linear(points: Sequence[tuple[float, float]]) -> RegressionModel:
    """Ordinary least squares line through ``(x, y)`` points."""
    if len(points) < 2:
        raise DegenerateDesignError("need at least 2 points")
    xy = np.asarray(points, dtype=np.float64)
    x, y = xy[:, 0], xy[:, 1]
    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise DegenerateDesignError("all x values are equal")
    slope = float(dx @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (slope * x + intercept)
    return RegressionModel(slope, intercept, float(np.sqrt(np.mean(resid ** 2))), len(points))


def predict_from_hardware(p: PartyProfile, calibration: Mapping[int, RegressionModel],
                          model_size: float | None = None) -> float:
    """Epoch time for a party that only reported its hardware.

    A calibration line measured at the party's own vCPU count is used as is;
    otherwise the 2-vCPU line is scaled by ``2 / vcpus``.
    """
    if not isinstance(p.timing, Hardware):
        raise ConfigError(f"party {p.party_id} has no hardware descriptor")
    hw = p.timing
    if model_size is not None and hw.ram_gb * 2 ** 30 < model_size:
        warnings.warn(f"party {p.party_id}: {hw.ram_gb} GB RAM is smaller than the model",
                      stacklevel=2)
    if hw.vcpus in calibration:
        return calibration[hw.vcpus](p.dataset_size)
    if BASELINE_VCPUS not in calibration:
        raise ConfigError(f"no calibration for {hw.vcpus} vCPUs (nor the {BASELINE_VCPUS}-vCPU baseline)")
    return calibration[BASELINE_VCPUS](p.dataset_size) * BASELINE_VCPUS / hw.vcpus


def estimate_train_time(p: PartyProfile, job: FLJobSpec,
                        calibration: Mapping[int, RegressionModel] | None = None) -> float:
    if p.intermittent:
        return job.t_wait
    freq, t = job.agg_frequency, p.timing
    if isinstance(freq, PerEpoch):
        if isinstance(t, EpochTime):
            return t.t_ep
        if isinstance(t, Hardware):
            return predict_from_hardware(p, calibration or {}, job.model_size)
        raise ConfigError(f"party {p.party_id}: minibatch time given but the job fuses per epoch "
                          "and the minibatch count is unknown")
    if isinstance(freq, EveryMinibatches):
        if isinstance(t, MinibatchTime):
            return freq.n_mb * t.t_mb
        raise ConfigError(f"party {p.party_id}: job fuses every {freq.n_mb} minibatches "
                          "but the party gave no minibatch time")
    raise ConfigError(f"unknown aggregation frequency {freq!r}")


def estimate_comm_time(p: PartyProfile, model_size: float) -> float:
    return model_size / p.bw_down + model_size / p.bw_up


def aggregation_time(n_parties: int, cluster: ClusterConfig, model_size: float) -> float:
    compute = n_parties * cluster.t_pair / (cluster.cores_per_agg * cluster.n_agg)
    return compute + model_size / cluster.bw_dc


def estimate_round(job: FLJobSpec, parties: Sequence[PartyProfile], cluster: ClusterConfig,
                   calibration: Mapping[int, RegressionModel] | None = None) -> EstimateSet:
    if not parties:
        raise ConfigError(f"job {job.job_id} has no parties")
    t_train, t_comm, t_upd = {}, {}, {}
    for p in parties:
        t_train[p.party_id] = estimate_train_time(p, job, calibration)
        # the wait window already bounds an intermittent party's transfer
        t_comm[p.party_id] = 0.0 if p.intermittent else estimate_comm_time(p, job.model_size)
        t_upd[p.party_id] = t_train[p.party_id] + t_comm[p.party_id]
    t_agg = aggregation_time(len(parties), cluster, job.model_size)
    return EstimateSet(t_train, t_comm, t_upd, max(t_upd.values()), t_agg)
