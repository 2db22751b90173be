import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jitagg.estimator import ClusterConfig
from jitagg.model import EpochTime, FLJobSpec, PartyMode, PartyProfile, PerEpoch
from jitagg.scenarios import Scenario, six_party_scenario, preemption_scenario
from jitagg.simkernel import US, fmt_time, run
from jitagg.strategies import (AggregatorTask, StrategyKind, TaskState, deadline_violations,
                               greedy_violations, make_policy)

INF = math.inf


def parties(times, prefix="p", mode=PartyMode.ACTIVE):
    return [PartyProfile(f"{prefix}{i}", mode, EpochTime(float(t)), 10 + i, INF, INF)
            for i, t in enumerate(times)]


def scenario(jobs, strategy, **cluster):
    """``jobs`` maps job id to (arrival times, start_time)."""
    cluster.setdefault("bw_dc", INF)
    cluster.setdefault("t_pair", 1.0)
    specs, ps = [], {}
    for jid, (times, start) in jobs.items():
        specs.append(FLJobSpec(jid, 1.0, PerEpoch(), 0.0, len(times), 1, start_time=start))
        ps[jid] = parties(times, f"{jid}-")
    return Scenario("t", specs, ps, ClusterConfig(**cluster), StrategyKind.parse(strategy), 3, 1)


def kinds(trace, kind, subject=None):
    return [r for r in trace.of_kind(kind) if subject is None or r.subject == subject]


def test_strategy_parsing():
    assert StrategyKind.parse("batched:10") == StrategyKind("batched", 10)
    assert str(StrategyKind.parse("batched:7")) == "batched:7"
    assert StrategyKind.parse(" jit ").name == "jit"
    for bad in ("jit:3", "eager", "batched:0"):
        with pytest.raises(ValueError):
            StrategyKind.parse(bad)
    with pytest.raises(ValueError):
        make_policy(StrategyKind("batched"))


def test_task_ordering():
    a = AggregatorTask("a", 0, priority=14, deadline=14)
    b = AggregatorTask("b", 0, priority=9, deadline=9)
    assert sorted([a, b], key=AggregatorTask.order)[0] is b
    t = AggregatorTask("a", 0, state=TaskState.DONE)
    with pytest.raises(RuntimeError):
        t.mark_running(0)


# -- JIT --------------------------------------------------------------------

def test_six_party_jit_deadline_and_forced_start():
    tr = run(six_party_scenario("jit"))
    created = kinds(tr, "TaskCreated")[0]
    assert created.detail["deadline"] == created.detail["priority"] == "14.000000"
    start = kinds(tr, "TaskStart")[0]
    assert (start.time, start.detail["reason"], start.detail["pending"]) == (14 * US, "forced", 4)
    assert kinds(tr, "RoundDone")[0].time == 21 * US


def test_clamped_deadline_warns():
    # t_rnd = 10, t_agg = 12
    tr = run(scenario({"j": ([10] * 12, 0.0)}, "jit"))
    assert kinds(tr, "TaskCreated")[0].detail["deadline"] == "0.000000"
    assert kinds(tr, "Warning")[0].detail["msg"] == "t_agg_exceeds_t_rnd"


def test_priority_orders_jobs():
    tr = run(scenario({"late": ([20] * 6, 0.0), "soon": ([12] * 3, 0.0)}, "jit"))
    pr = {r.subject: r.detail["priority"] for r in kinds(tr, "TaskCreated")}
    assert pr == {"late/0": "14.000000", "soon/0": "9.000000"}


def test_greedy_start_on_idle_tick():
    # 3 updates queued by the t = 5 tick, deadline far away
    tr = run(scenario({"j": ([1, 1, 1, 100], 0.0)}, "jit", delta=5.0))
    first = kinds(tr, "TaskStart")[0]
    assert (first.time, first.detail["reason"], first.detail["pending"]) == (5 * US, "greedy", 3)


def test_no_start_without_updates():
    tr = run(scenario({"j": ([30, 30], 0.0)}, "jit", delta=5.0))
    ticks_before = [r for r in kinds(tr, "SchedulerTick") if r.time < 28 * US]
    assert len(ticks_before) == 6
    assert kinds(tr, "TaskStart")[0].time >= 30 * US
    assert kinds(tr, "TaskCreated")[0].detail["priority"] == "28.000000"
    assert not greedy_violations(tr)


def test_forced_start_preempts_lower_priority():
    # "a" (priority 21) is started greedily at t = 5; "b" (priority 8) has an
    # update queued at its deadline with the only executor busy
    jobs = {"a": ([1] * 8 + [30], 0.0), "b": ([7, 10], 0.0)}
    tr = run(scenario(jobs, "jit", delta=5.0, deploy_overhead=0.5, checkpoint_overhead=0.5))
    pr = {r.subject: r.detail["priority"] for r in kinds(tr, "TaskCreated")}
    assert pr == {"a/0": "21.000000", "b/0": "8.000000"}
    pre = kinds(tr, "Preempted")
    assert len(pre) == 1 and pre[0].subject == "a/0" and pre[0].time == 8 * US
    b_start = kinds(tr, "TaskStart", "b/0")[0]
    assert b_start.time == 8 * US + US // 2 and b_start.detail["reason"] == "reserved"
    assert not deadline_violations(tr)
    assert ("a", 0) in tr.models and ("b", 0) in tr.models


def test_timer_noop_when_running():
    tr = run(scenario({"j": ([1] * 8 + [30], 0.0)}, "jit", delta=5.0))
    alerts = kinds(tr, "TimerAlert")
    assert all(a.detail["running"] == 1 or a.detail["pending"] == 0 or
               any(s.time == a.time for s in kinds(tr, "TaskStart")) for a in alerts)


def test_preemption_scenario_equivalence():
    tr = run(preemption_scenario())
    assert len(kinds(tr, "Preempted")) >= 3
    iso = {j: run(preemption_scenario(jobs=(j,))) for j in ("low", "high")}
    for key, model in tr.models.items():
        ref = iso[key[0]].models[key]
        for a, b in zip(model.layers, ref.layers):
            np.testing.assert_allclose(a, b, rtol=1e-9, atol=0)
    off = run(preemption_scenario(preemption=False))
    assert not kinds(off, "Preempted")
    for key, model in off.models.items():
        for a, b in zip(model.layers, tr.models[key].layers):
            np.testing.assert_allclose(a, b, rtol=1e-9, atol=0)


def test_checkpoint_persisted_on_preemption():
    tr = run(preemption_scenario())
    ck = tr.queue.checkpoints["low/0"]
    assert ck.updates_absorbed == 10


# -- baselines --------------------------------------------------------------

def test_six_party_always_on_and_lazy():
    ao = run(six_party_scenario("always_on"))
    assert kinds(ao, "RoundDone")[0].time == 21 * US
    assert ao.meta["container_us"] == 21 * US and ao.meta["busy_us"] == 6 * US
    lazy = run(six_party_scenario("lazy"))
    st_ = kinds(lazy, "TaskStart")
    assert len(st_) == 1 and st_[0].time == 20 * US
    assert kinds(lazy, "RoundDone")[0].time == 26 * US


def test_eager_serverless_billing():
    times = [2, 6, 10, 13, 17, 20]
    tr = run(scenario({"j": (times, 0.0)}, "eager_serverless",
                      deploy_overhead=0.5, checkpoint_overhead=0.5))
    assert tr.meta["container_us"] == 12 * US
    assert len(kinds(tr, "TaskStart")) == 6
    tr0 = run(scenario({"j": (times, 0.0)}, "eager_serverless",
                       deploy_overhead=0.0, checkpoint_overhead=0.0))
    assert tr0.meta["container_us"] == 6 * US


def test_eager_serverless_coalesces():
    tr = run(scenario({"j": ([5, 5.1], 0.0)}, "eager_serverless",
                      deploy_overhead=0.5, checkpoint_overhead=0.5))
    assert len(kinds(tr, "TaskStart")) == 1
    assert len(kinds(tr, "Fused")) == 2


def test_batched_deployment_counts():
    six = [1, 4, 7, 10, 13, 16]
    tr = run(scenario({"j": (six, 0.0)}, "batched:2", deploy_overhead=0.1, checkpoint_overhead=0.1))
    assert len(kinds(tr, "TaskStart")) == 3
    tr = run(scenario({"j": (six[:5], 0.0)}, "batched:2", deploy_overhead=0.1,
                      checkpoint_overhead=0.1))
    assert len(kinds(tr, "TaskStart")) == 3


def test_batch_of_one_is_eager():
    times = [2, 6, 6.2, 13]
    a = run(scenario({"j": (times, 0.0)}, "batched:1", deploy_overhead=0.5))
    b = run(scenario({"j": (times, 0.0)}, "eager_serverless", deploy_overhead=0.5))
    strip = lambda tr: [(r.time, r.kind, r.subject) for r in tr.records]
    assert strip(a) == strip(b)
    assert a.meta["container_us"] == b.meta["container_us"]


def test_lazy_single_party_matches_eager():
    a = run(scenario({"j": ([4], 0.0)}, "lazy", deploy_overhead=0.5, checkpoint_overhead=0.5))
    b = run(scenario({"j": ([4], 0.0)}, "eager_serverless", deploy_overhead=0.5,
                     checkpoint_overhead=0.5))
    assert a.meta["container_us"] == b.meta["container_us"]
    assert kinds(a, "RoundDone")[0].time == kinds(b, "RoundDone")[0].time


def test_lazy_uses_parallel_capacity():
    # cores_per_agg = N divides each fusion across all cores
    n = 8
    tr = run(scenario({"j": ([3] * n, 0.0)}, "lazy", cores_per_agg=n, deploy_overhead=0.5,
                      checkpoint_overhead=0.5))
    assert kinds(tr, "RoundDone")[0].time == 3 * US + US // 2 + n * (US // n)


def test_always_on_simultaneous_fifo():
    tr = run(scenario({"j": ([5, 5], 0.0)}, "always_on"))
    assert kinds(tr, "RoundDone")[0].time == 7 * US


def test_always_on_bills_job_lifetime():
    tr = run(scenario({"j": ([5, 9], 3.0)}, "always_on", deploy_overhead=0.5))
    # job runs from 3 to 3 + 9 + 1
    assert tr.meta["container_us"] == 10 * US


# -- invariants -------------------------------------------------------------

arrivals = st.lists(st.floats(0.5, 120.0).map(lambda x: round(x, 3)), min_size=1, max_size=7)


@settings(max_examples=40, deadline=None)
@given(arrivals, arrivals, st.floats(0.0, 1.0), st.floats(1.0, 60.0), st.integers(1, 2))
def test_jit_safety_and_soundness(a, b, ovh, delta, n_agg):
    jobs = {"a": (a, 0.0), "b": (b, round(delta / 3, 3))}
    tr = run(scenario(jobs, "jit", delta=delta, n_agg=n_agg, t_pair=0.7,
                      deploy_overhead=ovh, checkpoint_overhead=ovh))
    assert not deadline_violations(tr)
    assert not greedy_violations(tr)
    for (jid, _), model in tr.models.items():
        assert model.contributing_parties == len(jobs[jid][0])
    # billed time never undercounts productive time
    assert tr.meta["busy_us"] <= tr.meta["container_us"]


@settings(max_examples=30, deadline=None)
@given(arrivals, st.sampled_from(["always_on", "eager_serverless", "batched:2", "lazy", "jit"]))
def test_models_independent_of_strategy(times, strategy):
    ref = run(scenario({"j": (times, 0.0)}, "always_on"))
    tr = run(scenario({"j": (times, 0.0)}, strategy, deploy_overhead=0.25))
    for a, b in zip(tr.models[("j", 0)].layers, ref.models[("j", 0)].layers):
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)


def test_deadline_check_flags_late_start():
    tr = run(six_party_scenario("jit"))
    alert = kinds(tr, "TimerAlert")[0]
    start = kinds(tr, "TaskStart")[0]
    start.time += 1  # tamper: start one microsecond after the deadline
    assert deadline_violations(tr) == [f"six_party/0 deadline {fmt_time(alert.time)}"]
