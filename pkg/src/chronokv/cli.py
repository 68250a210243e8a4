"""Command-line front end: run scenarios, check traces, bench timestamps."""

from __future__ import annotations

import argparse
import json
import sys

MS = 1_000_000


def _cmd_run(args) -> int:
    from . import metrics
    from .cluster import Cluster
    from .history import write_trace
    from .scenario import Scenario, load_scenario

    sc = load_scenario(args.scenario) if args.scenario else Scenario()
    if args.seed is not None:
        sc.seed = args.seed
    if args.until_ms is not None:
        sc.duration_ms = args.until_ms
    cluster = Cluster(sc)
    result = cluster.run()
    if args.trace:
        write_trace(args.trace, result.trace, meta={
            "seed": sc.seed,
            "interval_ms": sc.interval_ms,
            "epsilon_ns": sc.epsilon_ns,
        })
    summary = metrics.run_summary(result)
    json.dump(summary, sys.stdout, indent=2, default=str)
    print()
    if args.trace:
        print(f"trace written to {args.trace} "
              f"({len(result.trace)} events)", file=sys.stderr)
    return 0


def _cmd_check(args) -> int:
    from . import checkers, metrics
    from .history import build_history, read_trace

    meta, events = read_trace(args.trace)
    interval_ns = (args.interval_ms or meta.get("interval_ms", 100)) * MS
    epsilon_ns = args.epsilon_ns or meta.get("epsilon_ns", 100_000)
    h = build_history(events)
    end_ns = events[-1][0] if events else None

    verdicts = []
    if args.property in ("all", "ss"):
        verdicts += [
            checkers.check_timestamp_property(h),
            checkers.check_oracle_bounds(h, epsilon_ns),
            checkers.check_strict_serializability(h),
            checkers.check_commit_records(h),
            checkers.check_push_progress(h, end_ns=end_ns),
        ]
    if args.property in ("all", "replica"):
        verdicts += [
            checkers.check_epoch_cuts(h, interval_ns),
            checkers.check_replica_consistency(h, interval_ns),
            checkers.check_visibility_monotonic(h),
        ]
    for v in verdicts:
        print(v.summary())

    if args.property in ("all", "visibility"):
        vis = metrics.visibility_delays(h)
        delays = [d for _t, d in vis["series"]]
        summary = metrics.summarize_delays(delays)
        summary["unresolved"] = vis["unresolved"]
        if delays:
            shape = metrics.sawtooth_period_ns(vis["series"], interval_ns)
            if shape.get("ok"):
                summary["sawtooth_period_ms"] = shape["period_ns"] / MS
        print("visibility: " + json.dumps(summary))
        if args.csv:
            with open(args.csv, "w") as out:
                out.write("commit_ms,delay_ms\n")
                for t, d in vis["series"]:
                    out.write(f"{t / MS:.3f},{d / MS:.3f}\n")

    return 0 if all(verdicts) else 1


def _cmd_bench_ts(args) -> int:
    from .workload import bench_timestamp_service

    stats = bench_timestamp_service(
        seed=args.seed, mode=args.mode, n=args.n, spacing_ns=args.spacing_ns)
    json.dump(stats, sys.stdout, indent=2)
    print()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="chronokv",
        description="Simulated multi-region transactional KV store")
    sub = p.add_subparsers(dest="cmd", required=True)

    run = sub.add_parser("run", help="run a scenario")
    run.add_argument("--scenario", help="scenario YAML (default: built-in)")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--until-ms", type=int, default=None,
                     help="override run duration (virtual ms)")
    run.add_argument("--trace", help="write the event trace as JSONL")
    run.set_defaults(fn=_cmd_run)

    check = sub.add_parser("check", help="verify properties on a trace")
    check.add_argument("--trace", required=True)
    check.add_argument("--property", default="all",
                       choices=["all", "ss", "replica", "visibility"])
    check.add_argument("--interval-ms", type=int, default=None,
                       help="epoch interval if the trace header lacks it")
    check.add_argument("--epsilon-ns", type=int, default=None)
    check.add_argument("--csv", help="dump the visibility series as CSV")
    check.set_defaults(fn=_cmd_check)

    bench = sub.add_parser("bench-ts", help="timestamp service microbenchmark")
    bench.add_argument("--mode", required=True,
                       choices=["batched", "strawman"])
    bench.add_argument("--n", type=int, default=20_000)
    bench.add_argument("--spacing-ns", type=int, default=50)
    bench.add_argument("--seed", type=int, default=1)
    bench.set_defaults(fn=_cmd_bench_ts)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
