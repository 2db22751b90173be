"""Aggregation deployment policies driven by the simulation kernel.

Eager always-on keeps one aggregator per job for the job's lifetime. The
serverless family (eager, batched, lazy) deploys an aggregator once enough
updates are buffered and releases it as soon as the buffer drains. JIT defers
each round's aggregation to ``t_rnd - t_agg`` after round start, with timer
forced triggering, opportunistic starts on idle executors at scheduler ticks,
and priority preemption.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from .model import PartialAggregate
from .simkernel import (AccountingMode, EventKind, JobState, Run, SimEvent, SimTrace, Slot,
                        fmt_time, to_us)

if TYPE_CHECKING:
    from .simkernel import Simulator

logger = logging.getLogger(__name__)


class TaskState(enum.Enum):
    PENDING = "Pending"
    RUNNING = "Running"
    PREEMPTED = "Preempted"
    DONE = "Done"


@dataclass
class AggregatorTask:
    job_id: str
    round: int
    priority: int = 0
    deadline: int = 0
    state: TaskState = TaskState.PENDING
    checkpoint: PartialAggregate | None = None
    absorbed: set[str] = field(default_factory=set)
    triggered: bool = False
    timer_token: int = 0

    @property
    def key(self) -> str:
        return f"{self.job_id}/{self.round}"

    def mark_running(self, now: int) -> None:
        if self.state is TaskState.DONE:
            raise RuntimeError(f"task {self.key} restarted after completion")
        self.state = TaskState.RUNNING

    def order(self) -> tuple:
        return (self.priority, self.deadline, self.key)


@dataclass(frozen=True)
class StrategyKind:
    name: str
    batch_size: int | None = None

    NAMES = ("always_on", "eager_serverless", "batched", "lazy", "jit")

    def __post_init__(self):
        if self.name not in self.NAMES:
            raise ValueError(f"unknown strategy {self.name!r}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @classmethod
    def parse(cls, text: str) -> StrategyKind:
        """Parse ``always_on | eager_serverless | batched[:<k>] | lazy | jit``."""
        name, _, arg = text.strip().partition(":")
        if name != "batched" and arg:
            raise ValueError(f"strategy {name!r} takes no argument")
        return cls(name, int(arg) if arg else None)

    def __str__(self) -> str:
        if self.name == "batched" and self.batch_size is not None:
            return f"batched:{self.batch_size}"
        return self.name


ALWAYS_ON = StrategyKind("always_on")
EAGER_SERVERLESS = StrategyKind("eager_serverless")
LAZY = StrategyKind("lazy")
JIT = StrategyKind("jit")


class Policy:
    name = "policy"
    accounting = AccountingMode.DYNAMIC

    def bind(self, sim: "Simulator") -> None:
        self.sim = sim

    def create_task(self, job: JobState) -> AggregatorTask:
        return AggregatorTask(job.spec.job_id, job.round)

    def on_start(self) -> None:
        pass

    def on_job_start(self, job: JobState) -> None:
        pass

    def on_round_start(self, job: JobState) -> None:
        pass

    def on_update(self, job: JobState) -> None:
        pass

    def on_all_in(self, job: JobState) -> None:
        pass

    def on_drained(self, job: JobState, run: Run) -> None:
        self.sim.stop_run(run, "drained")
        job.task.state = TaskState.PENDING

    def on_hold_expired(self, job: JobState, run: Run) -> None:
        self.sim.stop_run(run, "hold_expired")
        job.task.state = TaskState.PENDING

    def on_round_done(self, job: JobState) -> None:
        job.task.state = TaskState.DONE
        if job.run is not None:
            self.sim.stop_run(job.run, "round_done")

    def on_round_failed(self, job: JobState) -> None:
        job.task.state = TaskState.DONE

    def on_job_done(self, job: JobState) -> None:
        pass

    def on_slot_freed(self, slot: Slot) -> None:
        pass

    def on_timer(self, ev: SimEvent) -> None:
        pass

    def on_tick(self) -> None:
        pass


class AlwaysOnPolicy(Policy):
    """One dedicated aggregator per job, alive from job start to job end."""

    name = "always_on"
    accounting = AccountingMode.ALWAYS_ON

    def on_job_start(self, job: JobState) -> None:
        job.slot = self.sim.pool.add_slot(self.sim.now)

    def on_round_start(self, job: JobState) -> None:
        self.sim.start_run(job, job.slot, "always_on", deploy=False, bill=False)

    def on_drained(self, job: JobState, run: Run) -> None:
        self.sim.hold(job, run, None)

    def on_job_done(self, job: JobState) -> None:
        self.sim.pool.retire(job.slot, self.sim.now)


class ServerlessPolicy(Policy):
    """Deploy when ``threshold`` updates are buffered (or the round closes)."""

    def __init__(self, name: str, threshold: float):
        self.name = name
        self.threshold = threshold
        self.waiting: list[str] = []

    def _request(self, job: JobState) -> None:
        if job.run is not None or job.spec.job_id in self.waiting or not self.sim.pending(job):
            return
        slot = self.sim.pool.free_slot()
        if slot is None:
            self.waiting.append(job.spec.job_id)
            return
        self.sim.start_run(job, slot, self.name)

    def on_update(self, job: JobState) -> None:
        if job.run is None and len(self.sim.pending(job)) >= self.threshold:
            self._request(job)

    def on_all_in(self, job: JobState) -> None:
        self._request(job)

    def on_slot_freed(self, slot: Slot) -> None:
        while self.waiting:
            slot = self.sim.pool.free_slot()
            if slot is None:
                return
            job = self.sim.jobs[self.waiting.pop(0)]
            if job.run is None and self.sim.pending(job) and not job.done:
                self.sim.start_run(job, slot, self.name)


class JITPolicy(Policy):
    """Deadline-driven deferral with greedy starts and priority preemption.

    Priority is the task's initial absolute deadline, so it orders tasks across
    jobs that started at different times. The effective deadline moves later
    when an opportunistic run has already absorbed part of the round.
    """

    name = "jit"

    def create_task(self, job: JobState) -> AggregatorTask:
        sim = self.sim
        slack = job.t_rnd - job.t_agg
        if slack < 0:
            logger.warning("%s: t_agg %.3fs >= t_rnd %.3fs; aggregating from round start",
                           job.subject, job.t_agg / 1e6, job.t_rnd / 1e6)
            sim.trace.log(sim.now, "Warning", job.subject, msg="t_agg_exceeds_t_rnd")
        deadline = job.round_start + max(0, slack)
        task = AggregatorTask(job.spec.job_id, job.round, priority=deadline, deadline=deadline)
        self._arm(task, deadline)
        sim.trace.log(sim.now, "TaskCreated", task.key, priority=fmt_time(task.priority),
                      deadline=fmt_time(deadline))
        return task

    def _arm(self, task: AggregatorTask, at: int) -> None:
        task.timer_token += 1
        task.deadline = at
        self.sim.events.push(at, EventKind.TIMER_ALERT, job=task.job_id, round=task.round,
                             token=task.timer_token)

    def on_start(self) -> None:
        if self.sim.jobs:
            self.sim.events.push(0, EventKind.SCHEDULER_TICK)

    def on_tick(self) -> None:
        sim = self.sim
        sim.trace.log(sim.now, "SchedulerTick", "-")
        self.dispatch(greedy=True)
        if not sim.all_done():
            sim.events.push(sim.now + to_us(sim.cluster.delta), EventKind.SCHEDULER_TICK)

    def on_timer(self, ev: SimEvent) -> None:
        sim = self.sim
        job = sim.jobs[ev.data["job"]]
        task = job.task
        if (task is None or task.round != ev.data["round"] or task.timer_token != ev.data["token"]
                or task.state is TaskState.DONE):
            return
        running = job.run is not None
        sim.trace.log(sim.now, "TimerAlert", task.key, pending=len(sim.pending(job)),
                      running=int(running))
        task.triggered = True
        if not running:
            self.dispatch(greedy=False)

    def on_update(self, job: JobState) -> None:
        if job.task.triggered and job.run is None:
            self.dispatch(greedy=False)

    def on_all_in(self, job: JobState) -> None:
        # every expected update is in: nothing left to wait for
        job.task.triggered = True
        if job.run is None and self.sim.pending(job):
            self.dispatch(greedy=False)

    def on_drained(self, job: JobState, run: Run) -> None:
        # release the executor when the recomputed deadline for the remaining
        # updates is far enough away to pay for another deployment
        sim, task = self.sim, job.task
        at = job.round_start + max(0, job.t_rnd - sim.remaining_agg_us(job))
        if at > sim.now + sim.deploy_us + sim.ckpt_us:
            sim.stop_run(run, "deferred")
            task.state = TaskState.PENDING
            task.triggered = False
            if at != task.deadline:
                sim.trace.log(sim.now, "DeadlineMoved", task.key, deadline=fmt_time(at))
            self._arm(task, at)
            return
        task.triggered = True
        # too close to the deadline to redeploy in time: keep the slot (still
        # preemptible) until the remaining updates land or the round closes
        sim.hold(job, run, None)

    def on_slot_freed(self, slot: Slot) -> None:
        self.dispatch(greedy=False)

    def dispatch(self, greedy: bool) -> None:
        sim = self.sim
        reserved = {s.reserved_for for s in sim.pool.slots if s.reserved_for}
        ready = [j.task for j in sim.jobs.values()
                 if j.task is not None and not j.done and j.run is None
                 and j.task.state in (TaskState.PENDING, TaskState.PREEMPTED)
                 and sim.pending(j)
                 and (greedy or j.task.triggered or j.task.key in reserved
                      or j.task.state is TaskState.PREEMPTED)]
        for task in sorted(ready, key=AggregatorTask.order):
            job = sim.jobs[task.job_id]
            if task.key in reserved:
                slot = next(s for s in sim.pool.slots if s.reserved_for == task.key)
                if slot.busy is None:
                    sim.start_run(job, slot, "reserved")
                continue
            slot = sim.pool.free_slot()
            if slot is not None:
                reason = ("forced" if task.triggered else
                          "resumed" if task.state is TaskState.PREEMPTED else "greedy")
                sim.start_run(job, slot, reason)
                continue
            # opportunistic candidates never displace other work
            if task.triggered and sim.cluster.preemption:
                self._preempt_for(task)

    def _preempt_for(self, task: AggregatorTask) -> bool:
        sim = self.sim
        victims = [j.run for j in sim.jobs.values()
                   if j.run is not None and j.run.deployed and j.run.slot.reserved_for is None
                   and j.run.phase != "publish"
                   and j.run.task.priority > task.priority]
        if not victims:
            return False
        victim = max(victims, key=lambda r: r.task.order())
        slot = victim.slot
        victim.task.state = TaskState.PREEMPTED
        sim.trace.log(sim.now, "Preempted", victim.task.key, by=task.key, slot=slot.index)
        sim.stop_run(victim, "preempted")
        slot.reserved_for = task.key
        return True


def make_policy(kind: StrategyKind) -> Policy:
    if kind.name == "always_on":
        return AlwaysOnPolicy()
    if kind.name == "eager_serverless":
        return ServerlessPolicy("eager_serverless", 1)
    if kind.name == "batched":
        if kind.batch_size is None:
            raise ValueError("batched strategy needs a batch size (resolve with batch_trigger_for)")
        return ServerlessPolicy(str(kind), kind.batch_size)
    if kind.name == "lazy":
        return ServerlessPolicy("lazy", math.inf)
    return JITPolicy()


# -- trace checks ----------------------------------------------------------

def deadline_violations(trace: SimTrace) -> list[str]:
    """JIT tasks with buffered updates that were not running by deadline + checkpoint."""
    ckpt = trace.meta.get("checkpoint_us", 0)
    starts: dict[str, list[int]] = {}
    for r in trace.of_kind("TaskStart"):
        starts.setdefault(r.subject, []).append(r.time)
    done = {r.subject: r.time for r in trace.of_kind("RoundDone")}
    bad = []
    for r in trace.of_kind("TimerAlert"):
        if r.detail["running"] or not r.detail["pending"]:
            continue
        if r.subject in done and done[r.subject] <= r.time + ckpt:
            continue
        if not any(r.time <= t <= r.time + ckpt for t in starts.get(r.subject, [])):
            bad.append(f"{r.subject} deadline {fmt_time(r.time)}")
    return bad


def greedy_violations(trace: SimTrace) -> list[str]:
    """Task starts that found no buffered update."""
    return [f"{r.subject} at {fmt_time(r.time)}" for r in trace.of_kind("TaskStart")
            if r.detail["reason"] != "always_on" and r.detail["pending"] < 1]
