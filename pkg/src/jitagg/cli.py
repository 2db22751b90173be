"""Command-line entry point: ``jitagg run|sweep|bench-tpair|validate``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings

from .estimator import ConfigError
from .model import MIN_BENCH_TRIALS, microbench_t_pair
from .reporting import FORMATS, ReportError, emit_report, evaluate
from .scenarios import ScenarioError, load_scenario, load_sweep
from .simkernel import run as simulate
from .strategies import StrategyKind

EXT = {"csv": "csv", "json": "json", "table": "txt", "plotdata": "json"}


def _strategies(text: str | None) -> list[str] | None:
    if not text:
        return None
    names = [t.strip() for t in text.split(",") if t.strip()]
    if names == ["all"]:
        names = ["jit", "batched", "eager_serverless", "lazy", "always_on"]
    for n in names:
        StrategyKind.parse(n)
    return names


def _write(records, fmt: str, out: str | None, stem: str) -> None:
    path = None
    if out:
        os.makedirs(out, exist_ok=True)
        path = os.path.join(out, f"{stem}.{EXT[fmt]}")
    sys.stdout.write(emit_report(records, fmt, path))


def cmd_run(args) -> int:
    scn = load_scenario(args.scenario, args.seed)
    for w in scn.warnings:
        print(f"warning: {w}", file=sys.stderr)
    kinds = _strategies(args.strategy) or [str(scn.strategy)]
    records = evaluate(scn, kinds)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        for k in kinds:
            s = scn.with_strategy(k)
            with open(os.path.join(args.out, f"trace-{s.strategy}.tsv".replace(":", "_")), "w") as fh:
                fh.write(simulate(s).export())
    _write(list(records.values()), args.format, args.out, "report")
    return 0


def cmd_sweep(args) -> int:
    scenarios = load_sweep(args.sweep)
    groups: dict[str, list] = {}
    for s in scenarios:
        groups.setdefault(s.name, []).append(s)
    records = []
    for name, group in groups.items():
        kinds = [str(s.strategy) for s in group]
        records.extend(evaluate(group[0], kinds).values())
    _write(records, args.format, args.out, "sweep")
    return 0


def cmd_bench(args) -> int:
    try:
        shape = [int(x) for x in args.shape.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad --shape {args.shape!r}; expected comma-separated integers") from None
    t = microbench_t_pair(shape, cores=args.cores, trials=args.trials, seed=args.seed)
    print(f"t_pair_s={t:.9f} shape={','.join(map(str, shape))} cores={args.cores} trials={args.trials}")
    return 0


def cmd_validate(args) -> int:
    scn = load_scenario(args.scenario)
    for w in scn.warnings:
        print(f"warning: {w}")
    n = sum(len(v) for v in scn.parties.values())
    print(f"ok: {scn.name}: {len(scn.jobs)} job(s), {n} parties, strategy {scn.strategy}, seed {scn.seed}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jitagg", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one scenario file")
    r.add_argument("scenario")
    r.add_argument("--strategy", help="strategy, comma-separated list, or 'all'")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="directory for the report and trace files")
    r.add_argument("--format", choices=FORMATS, default="table")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run every scenario of a sweep file")
    s.add_argument("sweep")
    s.add_argument("--out")
    s.add_argument("--format", choices=FORMATS, default="table")
    s.set_defaults(func=cmd_sweep)

    b = sub.add_parser("bench-tpair", help="measure pairwise fusion time")
    b.add_argument("--shape", required=True, help="layer lengths, e.g. 1000,1000")
    b.add_argument("--trials", type=int, default=MIN_BENCH_TRIALS)
    b.add_argument("--cores", type=int, default=1)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("validate", help="check a scenario file without running it")
    v.add_argument("scenario")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR, format="%(levelname)s: %(message)s")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except (ScenarioError, ConfigError, ReportError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # simulation failures (deadlock, invariant breach)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
