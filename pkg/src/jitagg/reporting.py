"""Metrics over simulation traces, cost projection, strategy comparison and report output."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .simkernel import US, SimTrace, run
from .scenarios import Scenario

COST_PER_CONTAINER_SECOND = 0.0002692
BASE_COLUMNS = ("scenario", "strategy", "parties", "mean_latency_s", "container_seconds",
                "cost_usd")
TAIL_COLUMNS = ("idle_fraction", "completed_rounds", "incomplete_rounds")
STRATEGY_ORDER = ("jit", "batched", "eager_serverless", "lazy", "always_on")
FORMATS = ("csv", "json", "table", "plotdata")


class ReportError(RuntimeError):
    pass


class _Incomplete:
    """Marker for a round whose quorum was never met."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "INCOMPLETE"

    def __bool__(self) -> bool:
        return False


INCOMPLETE = _Incomplete()


@dataclass
class MetricsRecord:
    scenario: str
    strategy: str
    parties: int
    latencies: list[float]
    container_seconds: float
    idle_fraction: float
    incomplete_rounds: int = 0
    savings_vs: dict[str, float] = field(default_factory=dict)

    @property
    def mean_latency_s(self) -> float:
        return math.fsum(self.latencies) / len(self.latencies) if self.latencies else math.nan

    @property
    def cost_usd(self) -> float:
        return project_cost(self.container_seconds)

    @property
    def completed_rounds(self) -> int:
        return len(self.latencies)

    def row(self, savings_columns: Sequence[str]) -> dict:
        out = {c: getattr(self, c) for c in BASE_COLUMNS}
        for s in savings_columns:
            out[f"savings_vs_{s}"] = self.savings_vs.get(s, math.nan)
        for c in TAIL_COLUMNS:
            out[c] = getattr(self, c)
        return out

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "strategy": self.strategy, "parties": self.parties,
                "latencies": list(self.latencies), "container_seconds": self.container_seconds,
                "idle_fraction": self.idle_fraction, "incomplete_rounds": self.incomplete_rounds,
                "savings_vs": dict(self.savings_vs)}

    @classmethod
    def from_dict(cls, d: Mapping) -> MetricsRecord:
        return cls(d["scenario"], d["strategy"], int(d["parties"]),
                   [float(x) for x in d["latencies"]], float(d["container_seconds"]),
                   float(d["idle_fraction"]), int(d.get("incomplete_rounds", 0)),
                   {k: float(v) for k, v in d.get("savings_vs", {}).items()})


# -- metrics ----------------------------------------------------------------

def aggregation_latency(trace: SimTrace, job_id: str, round: int) -> float | _Incomplete:
    """Seconds from the last accepted update of a round to its fused model."""
    subject = f"{job_id}/{round}"
    ready = next((r.time for r in trace.of_kind("RoundDone") if r.subject == subject), None)
    if ready is None:
        if any(r.subject == subject for r in trace.of_kind("RoundIncomplete")):
            return INCOMPLETE
        raise KeyError(f"round {subject} not in trace")
    last = max(r.time for r in trace.of_kind("UpdateArrived") if r.subject == subject)
    return (ready - last) / US


def round_latencies(trace: SimTrace, job_id: str | None = None) -> tuple[list[float], int]:
    """Latencies of completed rounds (in trace order) and the count of incomplete ones."""
    last: dict[str, int] = {}
    out = []
    incomplete = 0
    for r in trace.records:
        if job_id is not None and r.subject.partition("/")[0] != job_id:
            continue
        if r.kind == "UpdateArrived":
            last[r.subject] = r.time
        elif r.kind == "RoundDone":
            out.append((r.time - last[r.subject]) / US)
        elif r.kind == "RoundIncomplete":
            incomplete += 1
    return out, incomplete


def mean_latency(trace: SimTrace, job_id: str | None = None) -> float:
    lat, _ = round_latencies(trace, job_id)
    return math.fsum(lat) / len(lat) if lat else math.nan


def idle_fraction(trace: SimTrace) -> float:
    total = trace.meta["container_us"]
    return 1.0 - trace.meta["busy_us"] / total if total else 0.0


def project_cost(container_seconds: float, rate_usd_per_s: float = COST_PER_CONTAINER_SECOND) -> float:
    if container_seconds < 0 or rate_usd_per_s < 0:
        raise ValueError("container seconds and rate must be >= 0")
    return round(container_seconds * rate_usd_per_s, 4)


def savings(this: float, other: float) -> float:
    """Percent of ``other``'s usage saved by ``this``."""
    if other == 0:
        return 0.0 if this == 0 else -math.inf
    return (other - this) / other * 100.0


def metrics(trace: SimTrace, scenario: Scenario) -> MetricsRecord:
    lat, incomplete = round_latencies(trace)
    return MetricsRecord(scenario.name, str(scenario.strategy),
                         sum(len(v) for v in scenario.parties.values()), lat,
                         trace.meta["container_us"] / US, idle_fraction(trace), incomplete)


def evaluate(scenario: Scenario, strategies: Iterable[str] | None = None) -> dict[str, MetricsRecord]:
    """Run ``scenario`` once per strategy and return compared records keyed by strategy."""
    kinds = list(strategies) if strategies else [str(scenario.strategy)]
    records = {}
    for k in kinds:
        s = scenario.with_strategy(k)
        records[str(s.strategy)] = metrics(run(s), s)
    return compare(records)


def _base(name: str) -> str:
    return name.partition(":")[0]


def compare(records: Mapping[str, MetricsRecord]) -> dict[str, MetricsRecord]:
    """Fill ``savings_vs`` of every record against every other record."""
    names = {r.scenario for r in records.values()}
    if len(names) > 1:
        raise ReportError(f"records come from different scenarios: {sorted(names)}")
    for key, rec in records.items():
        rec.savings_vs = {_base(k): savings(rec.container_seconds, o.container_seconds)
                          for k, o in records.items() if k != key}
    return dict(records)


# -- output -----------------------------------------------------------------

def _savings_columns(records: Sequence[MetricsRecord]) -> list[str]:
    seen = {k for r in records for k in r.savings_vs}
    known = [s for s in STRATEGY_ORDER if s in seen]
    return known + sorted(seen - set(known))


def columns(records: Sequence[MetricsRecord]) -> list[str]:
    return [*BASE_COLUMNS, *(f"savings_vs_{s}" for s in _savings_columns(records)), *TAIL_COLUMNS]


def _cell(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def _csv(records: Sequence[MetricsRecord]) -> str:
    cols = columns(records)
    sav = _savings_columns(records)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in records:
        row = r.row(sav)
        w.writerow([_cell(row[c]) for c in cols])
    return buf.getvalue()


def _table(records: Sequence[MetricsRecord]) -> str:
    cols = columns(records)
    sav = _savings_columns(records)
    cells = [cols]
    for r in records:
        row = r.row(sav)
        cells.append([f"{v:.4f}" if isinstance(v, float) else str(v) for v in (row[c] for c in cols)])
    widths = [max(len(row[i]) for row in cells) for i in range(len(cols))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _plotdata(records: Sequence[MetricsRecord]) -> str:
    series: dict[str, dict[str, list]] = {}
    for metric in ("mean_latency_s", "container_seconds", "cost_usd"):
        by = series.setdefault(metric, {})
        for r in sorted(records, key=lambda r: (r.strategy, r.parties, r.scenario)):
            by.setdefault(r.strategy, []).append([r.parties, getattr(r, metric)])
    return json.dumps({"x": "parties", "series": series}, indent=2, sort_keys=True) + "\n"


def emit_report(records: Sequence[MetricsRecord], fmt: str = "table",
                out: str | os.PathLike | None = None) -> str:
    """Render ``records``; also write them to ``out`` when a path is given."""
    records = list(records)
    if fmt == "csv":
        text = _csv(records)
    elif fmt == "json":
        text = json.dumps([r.to_dict() for r in records], indent=2) + "\n"
    elif fmt == "table":
        text = _table(records)
    elif fmt == "plotdata":
        text = _plotdata(records)
    else:
        raise ReportError(f"unknown format {fmt!r}; choose from {', '.join(FORMATS)}")
    if out is not None:
        try:
            with open(out, "w") as fh:
                fh.write(text)
        except OSError as exc:
            raise ReportError(f"cannot write {out}: {exc}") from exc
    return text


def load_json_report(text: str) -> list[MetricsRecord]:
    return [MetricsRecord.from_dict(d) for d in json.loads(text)]
