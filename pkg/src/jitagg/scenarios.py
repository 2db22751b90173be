"""Seeded scenario generation: workload presets, party populations, arrivals, config files.

Scenario files are YAML (or JSON, which YAML also parses). Minimal example::

    name: demo
    seed: 7
    strategy: jit
    rounds: 10
    cluster: {n_agg: 1, deploy_overhead: 0.5, checkpoint_overhead: 0.5}
    jobs:
      - job_id: j1
        preset: efficientnet_cifar100
        population: {n: 100, kind: active_homog, bandwidth: geo}

See the README for the full schema.
"""

from __future__ import annotations

import dataclasses
import enum
import math
import os
import warnings
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

from .estimator import (BASELINE_VCPUS, ClusterConfig, ConfigError, RegressionModel,
                        estimate_comm_time, estimate_round, fit_linear)
from .model import (EpochTime, EveryMinibatches, FLJobSpec, FusionKind, Hardware, MinibatchTime,
                    PartyMode, PartyProfile, PerEpoch, validate_roster)
from .simkernel import keyed_rng, to_us
from .strategies import StrategyKind

DEFAULT_ROUNDS = 50
DEFAULT_T_WAIT = 300.0
FIXED_BW = (100e6, 50e6)  # bytes/s down, up
# relative link quality of the four regions parties are spread over
REGION_BW_SCALE = (1.0, 0.6, 0.4, 0.25)


class ScenarioError(ValueError):
    pass


class Population(enum.Enum):
    ACTIVE_HOMOG = "active_homog"
    ACTIVE_HETEROG = "active_heterog"
    INTERMITTENT_HETEROG = "intermittent_heterog"

    @property
    def heterogeneous(self) -> bool:
        return self is not Population.ACTIVE_HOMOG


@dataclass(frozen=True)
class WorkloadPreset:
    """Timing and size parameters standing in for a real model/dataset pair.

    Parameter counts are public approximations for the named architectures and
    the timings are free parameters; neither comes from real measurements here.
    """

    name: str
    param_count: int
    baseline_epoch_time: float  # seconds at 2 vCPUs for samples_per_party samples
    fusion_kind: FusionKind = FusionKind.WEIGHTED_MEAN
    t_pair: float = 0.02
    samples_per_party: int = 500
    num_classes: int = 10

    def __post_init__(self):
        if self.param_count <= 0:
            raise ValueError("param_count must be > 0")
        if self.baseline_epoch_time <= 0:
            raise ValueError("baseline_epoch_time must be > 0")

    @property
    def model_size(self) -> float:
        return self.param_count * 4.0

    def epoch_line(self) -> tuple[float, float]:
        """(slope, intercept) of epoch time against dataset size at 2 vCPUs."""
        intercept = 0.1 * self.baseline_epoch_time
        return 0.9 * self.baseline_epoch_time / self.samples_per_party, intercept


PRESETS: dict[str, WorkloadPreset] = {
    p.name: p for p in (
        WorkloadPreset("efficientnet_cifar100", 66_000_000, 30.0, t_pair=0.02,
                       samples_per_party=500, num_classes=100),
        WorkloadPreset("vgg16_rvlcdip", 138_000_000, 45.0, t_pair=0.04,
                       samples_per_party=800, num_classes=16),
        WorkloadPreset("inceptionv4_inaturalist", 43_000_000, 40.0, t_pair=0.015,
                       samples_per_party=400, num_classes=1010),
    )
}


def get_preset(name: str, **overrides) -> WorkloadPreset:
    try:
        preset = PRESETS[name]
    except KeyError:
        raise ScenarioError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return dataclasses.replace(preset, **overrides) if overrides else preset


@dataclass
class Scenario:
    name: str
    jobs: list[FLJobSpec]
    parties: dict[str, list[PartyProfile]]
    cluster: ClusterConfig
    strategy: StrategyKind
    seed: int = 0
    rounds: int = DEFAULT_ROUNDS
    estimate_noise: float = 0.0
    calibration: dict[str, dict[int, RegressionModel]] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    # hand the scheduler each round's realized arrival times instead of estimates
    exact_estimates: bool = False

    def __post_init__(self):
        ids = [j.job_id for j in self.jobs]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate job ids")
        if set(self.parties) != set(ids):
            raise ScenarioError("every job needs a party list and every party list a job")
        if not 0 <= self.seed < 2 ** 64:
            raise ScenarioError("seed must be a 64-bit unsigned integer")
        if not 0 <= self.estimate_noise < 1:
            raise ScenarioError("estimate_noise must be in [0, 1)")
        self.strategy = resolve_strategy(self.strategy, self.max_parties)

    @property
    def max_parties(self) -> int:
        return max((len(v) for v in self.parties.values()), default=0)

    def with_strategy(self, strategy: StrategyKind | str) -> Scenario:
        if isinstance(strategy, str):
            strategy = StrategyKind.parse(strategy)
        return dataclasses.replace(self, strategy=strategy, warnings=list(self.warnings))

    def with_options(self, **changes) -> Scenario:
        return dataclasses.replace(self, warnings=list(self.warnings), **changes)

    def with_cluster(self, **changes) -> Scenario:
        return dataclasses.replace(self, cluster=dataclasses.replace(self.cluster, **changes),
                                   warnings=list(self.warnings))


def resolve_strategy(strategy: StrategyKind, n_parties: int) -> StrategyKind:
    """Fill in the batch size of a bare ``batched`` strategy from the party count."""
    if strategy.name == "batched" and strategy.batch_size is None:
        return StrategyKind("batched", batch_trigger_for(n_parties))
    return strategy


def batch_trigger_for(n_parties: int) -> int:
    table = {10: 2, 100: 10, 1000: 100, 10000: 100}
    return table.get(n_parties, max(2, n_parties // 10))


# -- party populations ------------------------------------------------------

def _bandwidths(n: int, mode: str, rng: np.random.Generator) -> np.ndarray:
    base = np.tile(np.asarray(FIXED_BW), (n, 1))
    if mode == "fixed":
        return base
    if mode != "geo":
        raise ScenarioError(f"unknown bandwidth mode {mode!r}; use fixed or geo")
    region = rng.integers(0, len(REGION_BW_SCALE), n)
    jitter = rng.uniform(0.9, 1.1, n)
    return base * (np.asarray(REGION_BW_SCALE)[region] * jitter)[:, None]


def generate_parties(n: int, population: Population | str, preset: WorkloadPreset,
                     seed: int, bandwidth: str = "fixed", timing: str = "hardware",
                     label_alpha: float = 0.5, prefix: str = "p") -> list[PartyProfile]:
    """Seeded party roster for one job.

    ``timing="hardware"`` reports vCPU/RAM and relies on the preset calibration,
    ``timing="epoch"`` reports the resulting epoch time directly.
    """
    if n < 1:
        raise ScenarioError("n must be >= 1")
    population = Population(population)
    if timing not in ("hardware", "epoch"):
        raise ScenarioError(f"unknown timing mode {timing!r}; use hardware or epoch")
    key = (population.value, preset.name, n)
    hw_rng = keyed_rng(seed, "hardware", *key)
    if population.heterogeneous:
        vcpus = hw_rng.integers(1, 3, n)
        ram = hw_rng.choice(np.array([2, 4, 6, 8]), n)
    else:
        vcpus, ram = np.full(n, 2), np.full(n, 4)
    bw = _bandwidths(n, bandwidth, keyed_rng(seed, "bandwidth", *key))
    # non-IID label skew kept as metadata only
    shares = keyed_rng(seed, "labels", *key).dirichlet(
        np.full(preset.num_classes, label_alpha), n)
    slope, intercept = preset.epoch_line()
    ds = preset.samples_per_party
    mode = PartyMode.INTERMITTENT if population is Population.INTERMITTENT_HETEROG else PartyMode.ACTIVE
    width = max(5, len(str(n - 1)))
    out = []
    for i in range(n):
        if timing == "hardware":
            t = Hardware(int(vcpus[i]), int(ram[i]))
        else:
            t = EpochTime((slope * ds + intercept) * BASELINE_VCPUS / int(vcpus[i]))
        out.append(PartyProfile(f"{prefix}{i:0{width}d}", mode, t, ds, float(bw[i, 0]),
                                float(bw[i, 1]), shares[i]))
    return out


def preset_calibration(preset: WorkloadPreset, points: int = 10) -> dict[int, RegressionModel]:
    """Calibration line for the 2-vCPU baseline, fitted to the preset's epoch line."""
    slope, intercept = preset.epoch_line()
    xs = np.linspace(0.2, 2.0, points) * preset.samples_per_party
    return {BASELINE_VCPUS: fit_linear([(float(x), slope * float(x) + intercept) for x in xs])}


def sample_intermittent_arrival(party: PartyProfile, round_start_us: int, t_wait: float,
                                model_size: float, rng: np.random.Generator) -> int:
    """Arrival time (integer microseconds) of an intermittent party's update.

    Uniform over ``[start + t_comm, start + t_wait]`` with both ends included.
    A party whose transfer alone exceeds the window arrives after the cutoff.
    """
    lo = to_us(estimate_comm_time(party, model_size))
    hi = to_us(t_wait)
    if lo > hi:
        warnings.warn(f"party {party.party_id}: t_comm {lo / 1e6:.3f}s exceeds t_wait "
                      f"{t_wait:.3f}s; it will always miss the cutoff", stacklevel=2)
        return round_start_us + lo
    return round_start_us + int(rng.integers(lo, hi, endpoint=True))


# -- builders ---------------------------------------------------------------

def build_scenario(preset: WorkloadPreset | str, population: Population | str, n: int,
                   strategy: StrategyKind | str = "jit", seed: int = 0,
                   rounds: int = DEFAULT_ROUNDS, bandwidth: str | None = None,
                   timing: str = "hardware", cluster: ClusterConfig | None = None,
                   t_wait: float = DEFAULT_T_WAIT, quorum: int | None = None,
                   estimate_noise: float = 0.0, model_shape: Sequence[int] = (8,),
                   job_id: str = "job0", name: str | None = None) -> Scenario:
    """Single-job scenario from a preset and a population recipe."""
    if isinstance(preset, str):
        preset = get_preset(preset)
    population = Population(population)
    if isinstance(strategy, str):
        strategy = StrategyKind.parse(strategy)
    if bandwidth is None:
        bandwidth = "geo" if population.heterogeneous else "fixed"
    parties = generate_parties(n, population, preset, seed, bandwidth, timing)
    if quorum is None:
        quorum = n if population is not Population.INTERMITTENT_HETEROG else max(1, n // 2)
    job = FLJobSpec(job_id, preset.model_size, PerEpoch(), t_wait, quorum, rounds,
                    preset.fusion_kind, tuple(model_shape))
    if cluster is None:
        cluster = ClusterConfig(t_pair=preset.t_pair)
    name = name or f"{preset.name}-{population.value}-{n}"
    scn = Scenario(name, [job], {job_id: parties}, cluster, strategy, seed, rounds,
                   estimate_noise, {job_id: preset_calibration(preset)})
    scn.warnings.extend(check_scenario(scn))
    return scn


def six_party_scenario(strategy: StrategyKind | str = "jit", seed: int = 0) -> Scenario:
    """Six active parties finishing at t = 2, 6, 10, 13, 17, 20 with t_pair = 1 s.

    All bandwidths are infinite, so transfers take no time and arrivals equal
    the listed epoch times.
    """
    if isinstance(strategy, str):
        strategy = StrategyKind.parse(strategy)
    times = (2, 6, 10, 13, 17, 20)
    parties = [PartyProfile(f"P{i + 1}", PartyMode.ACTIVE, EpochTime(float(t)), 100, math.inf,
                            math.inf) for i, t in enumerate(times)]
    job = FLJobSpec("six_party", 1.0, PerEpoch(), 0.0, len(parties), 1, FusionKind.WEIGHTED_MEAN, (8,))
    cluster = ClusterConfig(n_agg=1, cores_per_agg=1, bw_dc=math.inf, t_pair=1.0,
                            deploy_overhead=0.0, checkpoint_overhead=0.0)
    return Scenario("six_party", [job], {"six_party": parties}, cluster, strategy, seed, 1)


def preemption_scenario(strategy: StrategyKind | str = "jit", high_rounds: int = 3,
                        jobs: Sequence[str] = ("low", "high"), preemption: bool = True) -> Scenario:
    """Two jobs on one executor where the urgent job repeatedly evicts the other.

    ``low`` starts at 0 with a far deadline and is started opportunistically at
    the t = 60 tick. ``high`` starts at 61 with a deadline clamped to its round
    start, so each of its rounds preempts ``low`` as soon as an update lands.
    """
    if isinstance(strategy, str):
        strategy = StrategyKind.parse(strategy)
    big = math.inf
    low = [PartyProfile(f"L{i}", PartyMode.ACTIVE, EpochTime(5.0 if i < 9 else 110.0),
                        50 + 10 * i, big, big) for i in range(10)]
    high = [PartyProfile(f"H{i}", PartyMode.ACTIVE, EpochTime(1.0), 100 + i, big, big)
            for i in range(3)]
    specs = {
        "low": (FLJobSpec("low", 1.0, PerEpoch(), 0.0, 10, 1, model_shape=(16, 4, 8)), low),
        "high": (FLJobSpec("high", 1.0, PerEpoch(), 0.0, 3, high_rounds, model_shape=(6, 6),
                           start_time=61.0), high),
    }
    cluster = ClusterConfig(n_agg=1, bw_dc=big, t_pair=1.0, delta=60.0, deploy_overhead=0.5,
                            checkpoint_overhead=0.5, preemption=preemption)
    chosen = [specs[j] for j in jobs]
    return Scenario("preemption", [s for s, _ in chosen], {s.job_id: ps for s, ps in chosen},
                    cluster, strategy, 11, 1)


def scenario_matrix(sizes: Sequence[int] = (10, 100, 1000), presets: Sequence[str] | None = None,
                populations: Sequence[Population] = tuple(Population), seed: int = 0,
                rounds: int = 5, **kwargs) -> list[Scenario]:
    """Cartesian product of party counts, populations and presets (JIT strategy)."""
    out = []
    for preset in presets or sorted(PRESETS):
        for pop in populations:
            for n in sizes:
                out.append(build_scenario(preset, pop, n, "jit", seed, rounds, **kwargs))
    return out


# -- checks -----------------------------------------------------------------

def check_scenario(scn: Scenario) -> list[str]:
    """Raise ScenarioError for hard errors; return soft warnings."""
    notes = []
    for job in scn.jobs:
        parties = scn.parties[job.job_id]
        try:
            validate_roster(job, parties)
            est = estimate_round(job, parties, scn.cluster, scn.calibration.get(job.job_id))
        except (ValueError, ConfigError) as exc:
            raise ScenarioError(str(exc)) from exc
        for p in parties:
            if p.intermittent and estimate_comm_time(p, job.model_size) > job.t_wait:
                notes.append(f"{job.job_id}: party {p.party_id} can never meet t_wait")
        if est.t_agg >= est.t_rnd:
            notes.append(f"{job.job_id}: t_agg {est.t_agg:.3f}s >= t_rnd {est.t_rnd:.3f}s")
    return notes


# -- config files -----------------------------------------------------------

def _number(v: Any) -> Any:
    # YAML 1.1 reads exponents without a sign ("1.0e15") as strings
    if isinstance(v, str):
        try:
            return float(v)
        except ValueError:
            return v
    return v


def _parse_frequency(v: Any):
    if v in (None, "per_epoch"):
        return PerEpoch()
    if isinstance(v, Mapping) and "every_minibatches" in v:
        return EveryMinibatches(int(v["every_minibatches"]))
    raise ScenarioError(f"bad agg_frequency {v!r}")


def _parse_party(d: Mapping[str, Any], default_bw: tuple[float, float]) -> PartyProfile:
    if "t_ep" in d:
        timing = EpochTime(float(d["t_ep"]))
    elif "t_mb" in d:
        timing = MinibatchTime(float(d["t_mb"]))
    elif "vcpus" in d:
        timing = Hardware(int(d["vcpus"]), int(d.get("ram_gb", 4)))
    else:
        raise ScenarioError(f"party {d.get('party_id')!r} needs t_ep, t_mb or vcpus")
    return PartyProfile(str(d["party_id"]), PartyMode(d.get("mode", "active")), timing,
                        int(d.get("dataset_size", 1)), float(d.get("bw_down", default_bw[0])),
                        float(d.get("bw_up", default_bw[1])))


def _parse_job(d: Mapping[str, Any], seed: int, rounds: int):
    d = dict(d)
    job_id = str(d.get("job_id", "job0"))
    preset = None
    if "preset" in d:
        over = {k: d[k] for k in ("param_count", "baseline_epoch_time", "t_pair") if k in d}
        preset = get_preset(d["preset"], **over)
    parties: list[PartyProfile] = []
    if "population" in d:
        if preset is None:
            raise ScenarioError(f"job {job_id}: a population block needs a preset")
        pop = d["population"]
        parties += generate_parties(int(pop["n"]), pop.get("kind", "active_homog"), preset,
                                    int(pop.get("seed", seed)), pop.get("bandwidth", "fixed"),
                                    pop.get("timing", "hardware"), prefix=f"{job_id}-p")
    parties += [_parse_party(p, FIXED_BW) for p in d.get("parties", [])]
    if not parties:
        raise ScenarioError(f"job {job_id}: no parties")
    if "model_size" in d:
        model_size = float(_number(d["model_size"]))
    elif preset is not None:
        model_size = preset.model_size
    else:
        raise ScenarioError(f"job {job_id}: give model_size or a preset")
    intermittent = any(p.intermittent for p in parties)
    default_quorum = max(1, len(parties) // 2) if intermittent else len(parties)
    fusion = FusionKind(d["fusion"]) if "fusion" in d else (
        preset.fusion_kind if preset else FusionKind.WEIGHTED_MEAN)
    spec = FLJobSpec(job_id, model_size, _parse_frequency(d.get("agg_frequency")),
                     float(d.get("t_wait", DEFAULT_T_WAIT if intermittent else 0.0)),
                     int(d.get("quorum", default_quorum)), int(d.get("rounds", rounds)), fusion,
                     tuple(int(x) for x in d.get("model_shape", (8,))),
                     float(d.get("start_time", 0.0)))
    if "calibration" in d:
        cal = {int(k): fit_linear([tuple(map(float, pt)) for pt in v])
               for k, v in d["calibration"].items()}
    elif preset is not None:
        cal = preset_calibration(preset)
    else:
        cal = None
    return spec, parties, cal, preset


def scenario_from_dict(d: Mapping[str, Any], name: str = "scenario") -> Scenario:
    try:
        seed = int(d.get("seed", 0))
        rounds = int(d.get("rounds", DEFAULT_ROUNDS))
        jobs, parties, cals, presets = [], {}, {}, []
        for jd in d.get("jobs") or []:
            spec, ps, cal, preset = _parse_job(jd, seed, rounds)
            jobs.append(spec)
            parties[spec.job_id] = ps
            if cal is not None:
                cals[spec.job_id] = cal
            presets.append(preset)
        if not jobs:
            raise ScenarioError("scenario has no jobs")
        cluster_d = dict(d.get("cluster") or {})
        if "t_pair" not in cluster_d and presets[0] is not None:
            cluster_d["t_pair"] = presets[0].t_pair
        cluster = ClusterConfig(**{k: _number(v) for k, v in cluster_d.items()})
        strategy = StrategyKind.parse(str(d.get("strategy", "jit")))
        scn = Scenario(str(d.get("name", name)), jobs, parties, cluster, strategy, seed, rounds,
                       float(d.get("estimate_noise", 0.0)), cals,
                       exact_estimates=bool(d.get("exact_estimates", False)))
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"invalid scenario: {exc}") from exc
    scn.warnings.extend(check_scenario(scn))
    return scn


def _read_yaml(path: str | os.PathLike) -> Any:
    try:
        with open(path) as fh:
            return yaml.safe_load(fh)
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ScenarioError(f"cannot parse {path}: {exc}") from exc


def load_scenario(path: str | os.PathLike, seed: int | None = None) -> Scenario:
    """Load a scenario file; ``seed`` replaces the file's seed before generation."""
    d = _read_yaml(path)
    if not isinstance(d, Mapping):
        raise ScenarioError(f"{path}: expected a mapping at top level")
    if seed is not None:
        d = {**d, "seed": seed}
    return scenario_from_dict(d, os.path.splitext(os.path.basename(path))[0])


def load_sweep(path: str | os.PathLike) -> list[Scenario]:
    """A sweep lists scenarios (paths relative to the sweep file, or inline
    mappings) and optionally strategies to cross them with."""
    d = _read_yaml(path)
    if not isinstance(d, Mapping) or "scenarios" not in d:
        raise ScenarioError(f"{path}: a sweep needs a 'scenarios' list")
    base = os.path.dirname(os.path.abspath(path))
    scenarios = []
    for i, entry in enumerate(d["scenarios"]):
        if isinstance(entry, str):
            scenarios.append(load_scenario(os.path.join(base, entry)))
        elif isinstance(entry, Mapping):
            scenarios.append(scenario_from_dict(entry, f"scenario{i}"))
        else:
            raise ScenarioError(f"{path}: bad scenario entry {entry!r}")
    strategies = d.get("strategies")
    if not strategies:
        return scenarios
    return [s.with_strategy(k) for s in scenarios for k in strategies]
