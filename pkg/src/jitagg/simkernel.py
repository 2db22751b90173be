"""Deterministic discrete-event kernel.

Virtual time is kept in integer microseconds so event ordering never depends on
float rounding; simultaneous events are dispatched in insertion order.

The kernel owns the mechanics shared by every strategy: round lifecycle, update
arrivals and the message queue that buffers them, executor occupancy and
billing, and the fusion of queued updates into a task's partial aggregate. When
to deploy an aggregator and when to let it go is delegated to a policy object
(see :mod:`jitagg.strategies`).
"""

from __future__ import annotations

import enum
import heapq
import itertools
import logging
import zlib
from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Iterator

import numpy as np

from .estimator import EstimateSet, aggregation_time, estimate_comm_time, estimate_round
from .model import (FLJobSpec, GlobalModel, ModelUpdate, PartialAggregate, PartyProfile,
                    finalize, fuse_pair, lift)

if TYPE_CHECKING:
    from .scenarios import Scenario
    from .strategies import AggregatorTask, Policy

logger = logging.getLogger(__name__)

US = 1_000_000


def to_us(seconds: float) -> int:
    return int(round(seconds * US))


def fmt_time(us: int) -> str:
    sign = "-" if us < 0 else ""
    q, r = divmod(abs(us), US)
    return f"{sign}{q}.{r:06d}"


def keyed_rng(seed: int, *keys: Any) -> np.random.Generator:
    """Generator keyed by ``(seed, keys...)`` so draws do not depend on event order."""
    words = [seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF]
    words += [zlib.crc32(str(k).encode()) for k in keys]
    return np.random.default_rng(words)


class SimInvariantError(RuntimeError):
    """An internal kernel invariant was violated; the run is aborted."""


class SimulationDeadlock(RuntimeError):
    def __init__(self, unsatisfied: list[str]):
        super().__init__("event queue exhausted with unfinished rounds: " + "; ".join(unsatisfied))
        self.unsatisfied = unsatisfied


class EventKind(str, enum.Enum):
    JOB_START = "JobStart"
    ROUND_START = "RoundStart"
    UPDATE_ARRIVED = "UpdateArrived"
    WAIT_CUTOFF = "WaitCutoff"
    TIMER_ALERT = "TimerAlert"
    SCHEDULER_TICK = "SchedulerTick"
    DEPLOY_DONE = "DeployDone"
    FUSION_DONE = "FusionDone"
    PUBLISH_DONE = "PublishDone"
    HOLD_EXPIRED = "HoldExpired"
    EXECUTOR_FREED = "ExecutorFreed"


@dataclass(order=True)
class SimEvent:
    time: int
    seq: int
    kind: EventKind = field(compare=False)
    data: dict = field(compare=False, default_factory=dict)


class EventQueue:
    def __init__(self):
        self._heap: list[SimEvent] = []
        self._seq = itertools.count()
        self._ticks = 0

    def push(self, time: int, kind: EventKind, **data) -> SimEvent:
        ev = SimEvent(time, next(self._seq), kind, data)
        heapq.heappush(self._heap, ev)
        if kind is EventKind.SCHEDULER_TICK:
            self._ticks += 1
        return ev

    def pop(self) -> SimEvent:
        ev = heapq.heappop(self._heap)
        if ev.kind is EventKind.SCHEDULER_TICK:
            self._ticks -= 1
        return ev

    def only_ticks_left(self) -> bool:
        return len(self._heap) == self._ticks

    def __len__(self) -> int:
        return len(self._heap)


@dataclass
class TraceRecord:
    time: int
    kind: str
    subject: str
    detail: dict[str, Any]

    def line(self) -> str:
        detail = " ".join(f"{k}={v}" for k, v in self.detail.items())
        return f"{fmt_time(self.time)}\t{self.kind}\t{self.subject}\t{detail}".rstrip()


@dataclass
class SimTrace:
    """Event log of one run plus the final queue and pool state.

    ``export()`` yields one tab-separated line per record:
    ``time_s  kind  subject  key=value ...`` with time in seconds to 6 places.
    """

    records: list[TraceRecord] = field(default_factory=list)
    models: dict[tuple[str, int], GlobalModel] = field(default_factory=dict)
    queue: "QueueState | None" = None
    pool: "ExecutorPool | None" = None
    meta: dict[str, Any] = field(default_factory=dict)

    def log(self, time: int, kind: str, subject: str, **detail) -> None:
        self.records.append(TraceRecord(time, kind, subject, detail))

    def export(self) -> str:
        return "".join(r.line() + "\n" for r in self.records)

    def of_kind(self, kind: str) -> Iterator[TraceRecord]:
        return (r for r in self.records if r.kind == kind)


class AccountingMode(enum.Enum):
    ALWAYS_ON = "always_on"
    DYNAMIC = "dynamic"


@dataclass
class Slot:
    index: int
    busy: str | None = None
    opened_at: int | None = None
    intervals: list[tuple[int, int, str]] = field(default_factory=list)
    productive: list[tuple[int, int, str]] = field(default_factory=list)
    alive: tuple[int, int | None] | None = None
    reserved_for: str | None = None


class ExecutorPool:
    """Aggregator slots and their billing.

    In ``DYNAMIC`` mode a slot is billed from deployment until its checkpoint
    completes. In ``ALWAYS_ON`` mode a slot is billed for its whole lifetime.
    """

    def __init__(self, n_slots: int, cores: int, mode: AccountingMode,
                 deploy_overhead: int = 0, checkpoint_overhead: int = 0,
                 events: EventQueue | None = None):
        self.cores = cores
        self.mode = mode
        self.deploy_overhead = deploy_overhead
        self.checkpoint_overhead = checkpoint_overhead
        self.events = events
        self.slots = [Slot(i) for i in range(n_slots)]

    def add_slot(self, start: int) -> Slot:
        slot = Slot(len(self.slots), alive=(start, None))
        self.slots.append(slot)
        return slot

    def retire(self, slot: Slot, end: int) -> None:
        if slot.alive is None:
            raise SimInvariantError(f"slot {slot.index} was never brought up")
        slot.alive = (slot.alive[0], end)

    def free_slot(self, for_task: str | None = None) -> Slot | None:
        for s in self.slots:
            if s.busy is None and s.reserved_for in (None, for_task):
                return s
        return None

    def begin(self, slot: Slot, task: str, start: int) -> None:
        if slot.busy is not None:
            raise SimInvariantError(f"slot {slot.index} double-occupied by {task} (holds {slot.busy})")
        slot.busy, slot.opened_at, slot.reserved_for = task, start, None

    def end(self, slot: Slot, end: int) -> None:
        if slot.busy is None or slot.opened_at is None:
            raise SimInvariantError(f"slot {slot.index} released while idle")
        if slot.intervals and slot.intervals[-1][1] > slot.opened_at:
            raise SimInvariantError(f"slot {slot.index} billed intervals overlap")
        slot.intervals.append((slot.opened_at, end, slot.busy))
        slot.busy, slot.opened_at = None, None

    def occupy(self, slot: Slot, task: str, start: int, duration: int) -> SimEvent:
        """Run a task of known length; returns the ``ExecutorFreed`` event."""
        self.begin(slot, task, start)
        end = start + duration
        if self.mode is AccountingMode.DYNAMIC:
            end += self.deploy_overhead + self.checkpoint_overhead
        slot.productive.append((start, start + duration, task))
        if self.events is not None:
            return self.events.push(end, EventKind.EXECUTOR_FREED, slot=slot.index)
        return SimEvent(end, -1, EventKind.EXECUTOR_FREED, {"slot": slot.index})

    def container_us(self) -> int:
        if self.mode is AccountingMode.ALWAYS_ON:
            total = 0
            for s in self.slots:
                if s.alive is not None:
                    if s.alive[1] is None:
                        raise SimInvariantError(f"always-on slot {s.index} never retired")
                    total += s.alive[1] - s.alive[0]
            return total
        return sum(e - b for s in self.slots for b, e, _ in s.intervals)

    def busy_us(self) -> int:
        return sum(e - b for s in self.slots for b, e, _ in s.productive)


def container_seconds(pool: ExecutorPool) -> float:
    return pool.container_us() / US


class QueueState:
    """Buffered updates per job round, and persisted task checkpoints."""

    def __init__(self):
        self.pending: dict[tuple[str, int], deque[ModelUpdate]] = {}
        self.checkpoints: dict[str, PartialAggregate] = {}
        self.accepted: dict[tuple[str, int], int] = {}
        self.dropped: dict[tuple[str, int], list[str]] = {}

    def open_round(self, job_id: str, round: int) -> None:
        self.pending[(job_id, round)] = deque()
        self.accepted[(job_id, round)] = 0
        self.dropped.setdefault((job_id, round), [])

    def enqueue_update(self, u: ModelUpdate, job_id: str, round: int, cutoff: int | None,
                       open_: bool = True) -> str:
        """Buffer ``u`` unless it missed the round; ``cutoff`` is inclusive."""
        key = (job_id, round)
        late = (not open_) or (cutoff is not None and to_us(u.arrival_time) > cutoff)
        if late or key not in self.pending:
            self.dropped.setdefault(key, []).append(u.party_id)
            return "dropped_late"
        self.pending[key].append(u)
        self.accepted[key] += 1
        return "accepted"


@dataclass
class Run:
    """One occupancy of an executor slot by a task."""

    run_id: int
    job_id: str
    slot: Slot
    task: "AggregatorTask"
    started: int
    phase: str = "deploy"
    current: ModelUpdate | None = None
    token: int = 0
    deployed: bool = True


@dataclass
class JobState:
    spec: FLJobSpec
    parties: list[PartyProfile]
    estimates: EstimateSet
    t_rnd: int
    t_agg: int
    fuse: int
    load: int
    comm: dict[str, float]
    round: int = -1
    round_start: int = 0
    accepted: int = 0
    absorbed: int = 0
    last_arrival: int | None = None
    closed: bool = False
    task: "AggregatorTask | None" = None
    run: Run | None = None
    done: bool = False
    started_at: int | None = None
    ended_at: int | None = None
    slot: Slot | None = None

    @property
    def n(self) -> int:
        return len(self.parties)

    @property
    def has_cutoff(self) -> bool:
        return any(p.intermittent for p in self.parties)

    @property
    def key(self) -> tuple[str, int]:
        return (self.spec.job_id, self.round)

    @property
    def subject(self) -> str:
        return f"{self.spec.job_id}/{self.round}"


class Simulator:
    def __init__(self, scenario: "Scenario", policy: "Policy"):
        self.scenario = scenario
        self.cluster = scenario.cluster
        self.events = EventQueue()
        self.now = 0
        self.trace = SimTrace()
        self.queue = QueueState()
        self.pool = ExecutorPool(self.cluster.n_agg, self.cluster.cores_per_agg, policy.accounting,
                                 to_us(self.cluster.deploy_overhead),
                                 to_us(self.cluster.checkpoint_overhead), self.events)
        if policy.accounting is AccountingMode.ALWAYS_ON:
            self.pool.slots = []
        self.deploy_us = to_us(self.cluster.deploy_overhead)
        self.ckpt_us = to_us(self.cluster.checkpoint_overhead)
        self._run_ids = itertools.count()
        self.jobs: dict[str, JobState] = {}
        for spec in scenario.jobs:
            parties = scenario.parties[spec.job_id]
            cal = scenario.calibration.get(spec.job_id)
            est = estimate_round(spec, parties, self.cluster, cal)
            self.jobs[spec.job_id] = JobState(
                spec, list(parties), est, to_us(est.t_rnd), to_us(est.t_agg),
                to_us(self.cluster.t_pair / self.cluster.cores_per_agg),
                to_us(spec.model_size / self.cluster.bw_dc),
                {p.party_id: estimate_comm_time(p, spec.model_size) for p in parties})
        self.policy = policy
        policy.bind(self)

    # -- estimates shared with policies ------------------------------------

    def remaining_agg_us(self, job: JobState) -> int:
        remaining = job.n - job.absorbed
        return to_us(aggregation_time(remaining, self.cluster, job.spec.model_size))

    def pending(self, job: JobState) -> deque[ModelUpdate]:
        return self.queue.pending.get(job.key, deque())

    # -- main loop ---------------------------------------------------------

    def run(self) -> SimTrace:
        for job in self.jobs.values():
            self.events.push(to_us(job.spec.start_time), EventKind.JOB_START, job=job.spec.job_id)
        self.policy.on_start()
        handlers = {
            EventKind.JOB_START: self._on_job_start,
            EventKind.ROUND_START: self._on_round_start,
            EventKind.UPDATE_ARRIVED: self._on_update,
            EventKind.WAIT_CUTOFF: self._on_cutoff,
            EventKind.TIMER_ALERT: self.policy.on_timer,
            EventKind.SCHEDULER_TICK: self._on_tick,
            EventKind.DEPLOY_DONE: self._on_deploy_done,
            EventKind.FUSION_DONE: self._on_fusion_done,
            EventKind.PUBLISH_DONE: self._on_publish_done,
            EventKind.HOLD_EXPIRED: self._on_hold_expired,
            EventKind.EXECUTOR_FREED: self._on_freed,
        }
        while self.events:
            if self.events.only_ticks_left() and not self.all_done():
                break
            ev = self.events.pop()
            if ev.time < self.now:
                raise SimInvariantError(f"clock moved backwards: {ev.time} < {self.now}")
            self.now = ev.time
            handlers[ev.kind](ev)
        if not self.all_done():
            raise SimulationDeadlock([
                f"{j.subject}: {j.absorbed}/{j.spec.quorum} absorbed, {j.accepted} accepted"
                for j in self.jobs.values() if not j.done])
        self.trace.queue, self.trace.pool = self.queue, self.pool
        self.trace.meta.update(
            container_us=self.pool.container_us(), busy_us=self.pool.busy_us(),
            strategy=self.policy.name, checkpoint_us=self.ckpt_us,
            t_agg_us={j: s.t_agg for j, s in self.jobs.items()},
            fuse_us={j: s.fuse for j, s in self.jobs.items()})
        self.trace.log(self.now, "SimEnd", "-", container_s=fmt_time(self.pool.container_us()),
                       busy_s=fmt_time(self.pool.busy_us()))
        return self.trace

    def all_done(self) -> bool:
        return all(j.done for j in self.jobs.values())

    # -- rounds and arrivals -----------------------------------------------

    def _on_job_start(self, ev: SimEvent) -> None:
        job = self.jobs[ev.data["job"]]
        job.started_at = self.now
        self.trace.log(self.now, "JobStart", job.spec.job_id, parties=job.n,
                       t_rnd=fmt_time(job.t_rnd), t_agg=fmt_time(job.t_agg))
        self.policy.on_job_start(job)
        self.events.push(self.now, EventKind.ROUND_START, job=job.spec.job_id)

    def _on_round_start(self, ev: SimEvent) -> None:
        from .scenarios import sample_intermittent_arrival

        job = self.jobs[ev.data["job"]]
        job.round += 1
        job.round_start = self.now
        job.accepted = job.absorbed = 0
        job.last_arrival = None
        job.closed = False
        self.queue.open_round(*job.key)
        self.trace.log(self.now, "RoundStart", job.subject)
        seed, noise = self.scenario.seed, self.scenario.estimate_noise
        arrivals = []
        for p in job.parties:
            if p.intermittent:
                rng = keyed_rng(seed, "arrival", job.spec.job_id, p.party_id, job.round)
                at = sample_intermittent_arrival(p, self.now, job.spec.t_wait, job.spec.model_size, rng)
            else:
                train = job.estimates.t_train[p.party_id]
                if noise > 0:
                    rng = keyed_rng(seed, "noise", job.spec.job_id, p.party_id, job.round)
                    train *= 1.0 + rng.uniform(-noise, noise)
                at = self.now + to_us(train + job.comm[p.party_id])
            arrivals.append((at, p.party_id))
        if self.scenario.exact_estimates:
            # oracle mode: the scheduler sees this round's realized arrivals
            horizon = max(at for at, _ in arrivals) - self.now
            if job.has_cutoff:
                horizon = min(horizon, to_us(job.spec.t_wait))
            job.t_rnd = horizon
        job.task = self.policy.create_task(job)
        for at, party_id in arrivals:
            self.events.push(at, EventKind.UPDATE_ARRIVED, job=job.spec.job_id,
                             round=job.round, party=party_id)
        if job.has_cutoff:
            self.events.push(self.now + to_us(job.spec.t_wait), EventKind.WAIT_CUTOFF,
                             job=job.spec.job_id, round=job.round)
        self.policy.on_round_start(job)

    def _make_update(self, job: JobState, party: PartyProfile, round: int) -> ModelUpdate:
        rng = keyed_rng(self.scenario.seed, "update", job.spec.job_id, party.party_id, round)
        layers = [rng.uniform(-1.0, 1.0, n) for n in job.spec.model_shape]
        return ModelUpdate(party.party_id, round, layers, float(party.dataset_size), self.now / US)

    def _on_update(self, ev: SimEvent) -> None:
        job = self.jobs[ev.data["job"]]
        rnd, party_id = ev.data["round"], ev.data["party"]
        party = next(p for p in job.parties if p.party_id == party_id)
        u = self._make_update(job, party, rnd)
        open_ = rnd == job.round and not job.closed and not job.done
        cutoff = job.round_start + to_us(job.spec.t_wait) if job.has_cutoff else None
        status = self.queue.enqueue_update(u, job.spec.job_id, rnd, cutoff, open_)
        subject = f"{job.spec.job_id}/{rnd}"
        if status != "accepted":
            self.trace.log(self.now, "UpdateDropped", subject, party=party_id)
            return
        job.accepted += 1
        job.last_arrival = self.now
        self.trace.log(self.now, "UpdateArrived", subject, party=party_id,
                       pending=len(self.pending(job)))
        if job.run is not None and job.run.phase == "idle":
            self.resume(job.run)
        self.policy.on_update(job)
        if job.accepted == job.n and not job.closed:
            self._close(job)

    def _on_cutoff(self, ev: SimEvent) -> None:
        job = self.jobs[ev.data["job"]]
        if ev.data["round"] != job.round or job.closed or job.done:
            return
        self.trace.log(self.now, "WaitCutoff", job.subject, accepted=job.accepted)
        if job.accepted < job.spec.quorum:
            self._fail_round(job)
            return
        self._close(job)

    def _close(self, job: JobState) -> None:
        job.closed = True
        self.policy.on_all_in(job)
        self.maybe_complete(job)

    def maybe_complete(self, job: JobState) -> bool:
        """Finish the round once it is closed and every accepted update is fused.

        The fused model is then written to datacenter storage, which keeps the
        executor busy for ``model_size / bw_dc`` before the model is available.
        """
        if not job.closed or job.done or self.pending(job):
            return False
        run = job.run
        if run is not None and run.phase == "publish":
            return True
        if run is not None and run.current is not None:
            return False
        if job.absorbed != job.accepted:
            raise SimInvariantError(f"{job.subject}: {job.absorbed} absorbed of {job.accepted}")
        if run is not None and job.load > 0:
            run.phase = "publish"
            run.token += 1
            self.events.push(self.now + job.load, EventKind.PUBLISH_DONE, run=run.run_id,
                             token=run.token, job=job.spec.job_id)
            return True
        self._complete(job)
        return True

    def _on_publish_done(self, ev: SimEvent) -> None:
        found = self._run_of(ev)
        if found is None:
            return
        job, run = found
        run.slot.productive.append((self.now - job.load, self.now, run.task.key))
        self._complete(job)

    def _complete(self, job: JobState) -> None:
        task = job.task
        model = finalize(task.checkpoint, job.spec.fusion_kind, job.round, job.spec.quorum)
        self.trace.models[job.key] = model
        latency = self.now - job.last_arrival
        self.trace.log(self.now, "RoundDone", job.subject, ready=fmt_time(self.now),
                       last_arrival=fmt_time(job.last_arrival), latency=fmt_time(latency),
                       absorbed=job.absorbed, dropped=len(self.queue.dropped[job.key]))
        self.policy.on_round_done(job)
        self._next_round(job)

    def _fail_round(self, job: JobState) -> None:
        job.closed = True
        discarded = len(self.pending(job))
        self.pending(job).clear()
        self.trace.log(self.now, "RoundIncomplete", job.subject, accepted=job.accepted,
                       quorum=job.spec.quorum, discarded=discarded)
        if job.run is not None:
            self.stop_run(job.run, "round_failed")
        self.policy.on_round_failed(job)
        self._next_round(job)

    def _next_round(self, job: JobState) -> None:
        if job.round + 1 < job.spec.num_rounds:
            self.events.push(self.now, EventKind.ROUND_START, job=job.spec.job_id)
            return
        job.done = True
        job.ended_at = self.now
        self.trace.log(self.now, "JobDone", job.spec.job_id)
        self.policy.on_job_done(job)

    # -- executor runs -----------------------------------------------------

    def start_run(self, job: JobState, slot: Slot, reason: str, deploy: bool = True,
                  bill: bool = True) -> Run:
        task = job.task
        run = Run(next(self._run_ids), job.spec.job_id, slot, task, self.now, deployed=bill)
        if bill:
            self.pool.begin(slot, task.key, self.now)
        else:
            if slot.busy is not None:
                raise SimInvariantError(f"slot {slot.index} double-occupied")
            slot.busy = task.key
        job.run = run
        task.mark_running(self.now)
        if task.checkpoint is None:
            task.checkpoint = PartialAggregate.empty(job.spec.model_shape)
        self.trace.log(self.now, "TaskStart", job.subject, slot=slot.index,
                       pending=len(self.pending(job)), reason=reason)
        if deploy:
            run.phase = "deploy"
            self.events.push(self.now + self.deploy_us, EventKind.DEPLOY_DONE,
                             run=run.run_id, token=run.token, job=job.spec.job_id)
        else:
            run.phase = "fuse"
            self._next_fusion(job, run)
        return run

    def _run_of(self, ev: SimEvent) -> tuple[JobState, Run] | None:
        job = self.jobs[ev.data["job"]]
        run = job.run
        if run is None or run.run_id != ev.data["run"] or run.token != ev.data["token"]:
            return None
        return job, run

    def _on_deploy_done(self, ev: SimEvent) -> None:
        found = self._run_of(ev)
        if found is None:
            return
        job, run = found
        run.phase = "fuse"
        self._next_fusion(job, run)

    def _next_fusion(self, job: JobState, run: Run) -> None:
        q = self.pending(job)
        if q:
            run.current = q.popleft()
            self.events.push(self.now + job.fuse, EventKind.FUSION_DONE, run=run.run_id,
                             token=run.token, job=job.spec.job_id)
            return
        if self.maybe_complete(job):
            return
        self.policy.on_drained(job, run)

    def _on_fusion_done(self, ev: SimEvent) -> None:
        found = self._run_of(ev)
        if found is None:
            return
        job, run = found
        u, run.current = run.current, None
        task = run.task
        task.checkpoint = fuse_pair(task.checkpoint, lift(u, job.spec.fusion_kind))
        task.absorbed.add(u.party_id)
        job.absorbed += 1
        run.slot.productive.append((self.now - job.fuse, self.now, task.key))
        self.trace.log(self.now, "Fused", job.subject, party=u.party_id, absorbed=job.absorbed)
        self._next_fusion(job, run)

    def hold(self, job: JobState, run: Run, until: int | None) -> None:
        """Keep the slot while waiting for more updates (forever if ``until`` is None)."""
        run.phase = "idle"
        run.token += 1
        if until is not None:
            self.events.push(until, EventKind.HOLD_EXPIRED, run=run.run_id, token=run.token,
                             job=job.spec.job_id)

    def resume(self, run: Run) -> None:
        job = self.jobs[run.job_id]
        run.phase = "fuse"
        run.token += 1
        self._next_fusion(job, run)

    def _on_hold_expired(self, ev: SimEvent) -> None:
        found = self._run_of(ev)
        if found is None:
            return
        job, run = found
        if run.phase == "idle":
            self.policy.on_hold_expired(job, run)

    def stop_run(self, run: Run, reason: str) -> None:
        """Release the slot, persisting the task checkpoint first.

        An in-flight fusion is abandoned and its update goes back to the head
        of the queue.
        """
        job = self.jobs[run.job_id]
        if run.current is not None:
            self.pending(job).appendleft(run.current)
            run.current = None
        run.token += 1
        run.phase = "checkpoint"
        task = run.task
        self.queue.checkpoints[task.key] = task.checkpoint.copy()
        job.run = None
        self.trace.log(self.now, "TaskStop", f"{task.job_id}/{task.round}", slot=run.slot.index,
                       reason=reason, absorbed=len(task.absorbed))
        if not run.deployed:
            run.slot.busy = None
            return
        self.events.push(self.now + self.ckpt_us, EventKind.EXECUTOR_FREED, slot=run.slot.index)

    def _on_freed(self, ev: SimEvent) -> None:
        slot = self.pool.slots[ev.data["slot"]]
        self.pool.end(slot, self.now)
        self.trace.log(self.now, "ExecutorFreed", f"slot{slot.index}")
        self.policy.on_slot_freed(slot)

    def _on_tick(self, ev: SimEvent) -> None:
        self.policy.on_tick()


def run(scenario: "Scenario") -> SimTrace:
    """Simulate ``scenario`` under its configured strategy."""
    from .strategies import make_policy

    return Simulator(scenario, make_policy(scenario.strategy)).run()
