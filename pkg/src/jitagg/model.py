"""Domain types for FL jobs, parties and model updates, plus the fusion engine.

Partial aggregates carry a weighted sum and a total weight instead of a running
mean, so absorbing updates is associative and a checkpointed aggregate can be
resumed in any order.
"""

from __future__ import annotations

import enum
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

MIN_BENCH_TRIALS = 11


class ShapeMismatchError(ValueError):
    """Two aggregates (or an update and a job) disagree on layer shapes."""

    def __init__(self, layer: int, message: str):
        super().__init__(message)
        self.layer = layer


class FusionKind(enum.Enum):
    WEIGHTED_MEAN = "weighted_mean"
    MEAN = "mean"


class PartyMode(enum.Enum):
    ACTIVE = "active"
    INTERMITTENT = "intermittent"


@dataclass(frozen=True)
class PerEpoch:
    pass


@dataclass(frozen=True)
class EveryMinibatches:
    n_mb: int

    def __post_init__(self):
        if self.n_mb < 1:
            raise ValueError("n_mb must be >= 1")


AggFrequency = Union[PerEpoch, EveryMinibatches]


@dataclass(frozen=True)
class EpochTime:
    t_ep: float


@dataclass(frozen=True)
class MinibatchTime:
    t_mb: float


@dataclass(frozen=True)
class Hardware:
    vcpus: int
    ram_gb: int


Timing = Union[EpochTime, MinibatchTime, Hardware]


@dataclass(frozen=True)
class FLJobSpec:
    job_id: str
    model_size: float
    agg_frequency: AggFrequency
    t_wait: float
    quorum: int
    num_rounds: int
    fusion_kind: FusionKind = FusionKind.WEIGHTED_MEAN
    model_shape: tuple[int, ...] = (8,)
    start_time: float = 0.0

    def __post_init__(self):
        if self.model_size <= 0:
            raise ValueError(f"job {self.job_id}: model_size must be > 0")
        if self.num_rounds < 1:
            raise ValueError(f"job {self.job_id}: num_rounds must be >= 1")
        if self.quorum < 1:
            raise ValueError(f"job {self.job_id}: quorum must be >= 1")
        if not self.model_shape or any(n < 1 for n in self.model_shape):
            raise ValueError(f"job {self.job_id}: model_shape must list positive layer lengths")
        if self.start_time < 0:
            raise ValueError(f"job {self.job_id}: start_time must be >= 0")


@dataclass(frozen=True)
class PartyProfile:
    party_id: str
    mode: PartyMode
    timing: Timing
    dataset_size: int
    bw_down: float
    bw_up: float
    # non-IID label shares; metadata only, never used for timing
    label_shares: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.bw_down <= 0 or self.bw_up <= 0:
            raise ValueError(f"party {self.party_id}: bandwidths must be > 0")
        if self.dataset_size <= 0:
            raise ValueError(f"party {self.party_id}: dataset_size must be > 0")
        t = self.timing
        if isinstance(t, EpochTime) and t.t_ep <= 0:
            raise ValueError(f"party {self.party_id}: t_ep must be > 0")
        if isinstance(t, MinibatchTime) and t.t_mb <= 0:
            raise ValueError(f"party {self.party_id}: t_mb must be > 0")
        if isinstance(t, Hardware):
            if t.vcpus not in (1, 2):
                raise ValueError(f"party {self.party_id}: vcpus must be 1 or 2")
            if t.ram_gb not in (2, 4, 6, 8):
                raise ValueError(f"party {self.party_id}: ram_gb must be one of 2, 4, 6, 8")

    @property
    def intermittent(self) -> bool:
        return self.mode is PartyMode.INTERMITTENT


def validate_roster(job: FLJobSpec, parties: Sequence[PartyProfile]) -> None:
    """Check the job-level invariants that depend on the party roster."""
    if not parties:
        raise ValueError(f"job {job.job_id}: no parties")
    if job.quorum > len(parties):
        raise ValueError(f"job {job.job_id}: quorum {job.quorum} exceeds {len(parties)} parties")
    if any(p.intermittent for p in parties) and job.t_wait <= 0:
        raise ValueError(f"job {job.job_id}: t_wait must be > 0 with intermittent parties")
    ids = [p.party_id for p in parties]
    if len(set(ids)) != len(ids):
        raise ValueError(f"job {job.job_id}: duplicate party ids")


@dataclass
class ModelUpdate:
    party_id: str
    round: int
    layers: list[np.ndarray]
    sample_weight: float
    arrival_time: float = 0.0

    def __post_init__(self):
        if self.sample_weight <= 0:
            raise ValueError("sample_weight must be > 0")


@dataclass
class PartialAggregate:
    weighted_sum: list[np.ndarray] = field(default_factory=list)
    total_weight: float = 0.0
    updates_absorbed: int = 0
    # layers of the lone absorbed update, so a one-party round finalizes exactly
    source: list[np.ndarray] | None = field(default=None, repr=False, compare=False)

    @classmethod
    def empty(cls, shape: Sequence[int] = ()) -> PartialAggregate:
        return cls([np.zeros(n) for n in shape], 0.0, 0)

    @property
    def is_empty(self) -> bool:
        return self.updates_absorbed == 0

    def copy(self) -> PartialAggregate:
        return PartialAggregate([v.copy() for v in self.weighted_sum], self.total_weight,
                                self.updates_absorbed, self.source)


@dataclass
class GlobalModel:
    layers: list[np.ndarray]
    round: int
    contributing_parties: int


def check_shape(layers: Sequence[np.ndarray], shape: Sequence[int]) -> None:
    if len(layers) != len(shape):
        raise ShapeMismatchError(min(len(layers), len(shape)),
                                 f"expected {len(shape)} layers, got {len(layers)}")
    for i, (v, n) in enumerate(zip(layers, shape)):
        if v.shape != (n,):
            raise ShapeMismatchError(i, f"layer {i}: expected length {n}, got {v.shape}")


def fuse_pair(a: PartialAggregate, b: PartialAggregate) -> PartialAggregate:
    """Coordinate-wise sum of two partial aggregates."""
    if b.is_empty:
        return a.copy()
    if a.is_empty:
        return b.copy()
    if len(a.weighted_sum) != len(b.weighted_sum):
        raise ShapeMismatchError(min(len(a.weighted_sum), len(b.weighted_sum)),
                                 f"layer count differs: {len(a.weighted_sum)} vs {len(b.weighted_sum)}")
    for i, (x, y) in enumerate(zip(a.weighted_sum, b.weighted_sum)):
        if x.shape != y.shape:
            raise ShapeMismatchError(i, f"layer {i}: shape {x.shape} vs {y.shape}")
    return PartialAggregate([x + y for x, y in zip(a.weighted_sum, b.weighted_sum)],
                            a.total_weight + b.total_weight,
                            a.updates_absorbed + b.updates_absorbed)


def lift(u: ModelUpdate, fusion_kind: FusionKind = FusionKind.WEIGHTED_MEAN) -> PartialAggregate:
    w = u.sample_weight if fusion_kind is FusionKind.WEIGHTED_MEAN else 1.0
    layers = [np.asarray(v, dtype=np.float64) for v in u.layers]
    return PartialAggregate([w * v for v in layers], w, 1, layers)


def finalize(p: PartialAggregate, fusion_kind: FusionKind = FusionKind.WEIGHTED_MEAN,
             round: int = 0, quorum: int | None = None) -> GlobalModel:
    if p.updates_absorbed < 1:
        raise ValueError("cannot finalize an empty aggregate")
    if quorum is not None and p.updates_absorbed < quorum:
        raise ValueError(f"only {p.updates_absorbed} updates absorbed, quorum is {quorum}")
    if p.updates_absorbed == 1 and p.source is not None:
        return GlobalModel([v.copy() for v in p.source], round, 1)
    denom = p.total_weight if fusion_kind is FusionKind.WEIGHTED_MEAN else float(p.updates_absorbed)
    return GlobalModel([v / denom for v in p.weighted_sum], round, p.updates_absorbed)


def tree_fold(parts: Sequence[PartialAggregate]) -> PartialAggregate:
    """Pairwise reduction in a fixed tree order (left to right, level by level)."""
    level = list(parts)
    if not level:
        return PartialAggregate()
    while len(level) > 1:
        nxt = [fuse_pair(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


def random_update(shape: Sequence[int], rng: np.random.Generator, party_id: str = "bench",
                  round: int = 0, sample_weight: float = 1.0) -> ModelUpdate:
    return ModelUpdate(party_id, round, [rng.uniform(-1.0, 1.0, n) for n in shape], sample_weight)


def _fuse_chunked(a: PartialAggregate, b: PartialAggregate, pool: ThreadPoolExecutor | None,
                  cores: int) -> None:
    if pool is None:
        fuse_pair(a, b)
        return
    # split coordinates across cores; numpy releases the GIL inside np.add
    jobs = []
    for x, y in zip(a.weighted_sum, b.weighted_sum):
        out = np.empty_like(x)
        for xs, ys, os_ in zip(np.array_split(x, cores), np.array_split(y, cores),
                               np.array_split(out, cores)):
            jobs.append(pool.submit(np.add, xs, ys, os_))
    for j in jobs:
        j.result()


def microbench_t_pair(model_shape: Sequence[int], cores: int = 1, trials: int = MIN_BENCH_TRIALS,
                      seed: int = 0) -> float:
    """Median wall-clock seconds to fuse two random updates of ``model_shape``."""
    if not model_shape or any(n < 1 for n in model_shape):
        raise ValueError("model_shape must be a nonempty list of positive layer lengths")
    if cores < 1:
        raise ValueError("cores must be >= 1")
    if trials < MIN_BENCH_TRIALS:
        raise ValueError(f"at least {MIN_BENCH_TRIALS} trials are required, got {trials}")
    rng = np.random.default_rng(seed)
    samples = []
    pool = ThreadPoolExecutor(max_workers=cores) if cores > 1 else None
    try:
        for _ in range(trials):
            a = lift(random_update(model_shape, rng))
            b = lift(random_update(model_shape, rng))
            t0 = time.perf_counter()
            _fuse_chunked(a, b, pool, cores)
            samples.append(time.perf_counter() - t0)
    finally:
        if pool is not None:
            pool.shutdown()
    return statistics.median(samples)
