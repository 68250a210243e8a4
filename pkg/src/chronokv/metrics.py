"""Post-run measurement: visibility delay, latency, batching efficiency.

Everything here is analysis over a completed History/RunResult — floats are
fine, nothing feeds back into the simulation.
"""

from __future__ import annotations

import numpy as np

from .checkers import terminal_records
from .history import History
from .messages import COMMITTED

MS = 1_000_000


def visibility_delays(h: History, replicas_of: dict = None,
                      written_primaries=None) -> dict:
    """Per committed transaction: time from its durable commit record to
    the first instant every relevant replica can serve a read view
    covering its commit epoch (replayed_epoch >= commit_epoch).

    ``replicas_of`` maps primary node id -> replica node ids. Combined
    with ``written_primaries(txn) -> set of primary ids`` the measurement
    is restricted to replicas of the primaries the transaction wrote;
    without them it conservatively waits on every replica in the trace.

    Returns {"series": [(commit_ns, delay_ns)], "unresolved": n}; the
    series is sorted by commit time. Transactions whose epoch never got
    replayed everywhere before the trace ended are counted unresolved.
    """
    # first time each replica reached each epoch, as a step function
    reach: dict = {}  # replica -> [(epoch, t)] in replay order
    for t, node, _src, epoch in h.replays:
        reach.setdefault(node, []).append((epoch, t))
    src_of = {node: src for _t, node, src, _e in h.replays}

    def first_at(node, epoch):
        for e, t in reach.get(node, ()):
            if e >= epoch:
                return t
        return None

    records = terminal_records(h)
    series = []
    unresolved = 0
    for t in h.txns.values():
        if not t.committed or t.epoch is None:
            continue
        has_write = any(op[1] == "w" for op in t.ops)
        rec = records.get(t.txn)
        if not has_write or rec is None or rec[0] != COMMITTED:
            continue
        commit_ns = rec[2]
        if replicas_of is not None and written_primaries is not None:
            targets = [r for p in written_primaries(t)
                       for r in replicas_of.get(p, ())]
        else:
            targets = [r for r, src in src_of.items()]
        if not targets:
            continue
        instants = [first_at(r, t.epoch) for r in targets]
        if any(i is None for i in instants):
            unresolved += 1
            continue
        series.append((commit_ns, max(0, max(instants) - commit_ns)))
    series.sort()
    return {"series": series, "unresolved": unresolved}


def measure_visibility(h: History, replicas_of: dict = None,
                       written_primaries=None) -> dict:
    """Delay series plus its summary in one call: {"series", "summary",
    "unresolved"}. The series is the primary signal (the shape lives
    there); the summary carries max/p50/p90/p99."""
    vis = visibility_delays(h, replicas_of=replicas_of,
                            written_primaries=written_primaries)
    return {
        "series": vis["series"],
        "summary": summarize_delays([d for _t, d in vis["series"]]),
        "unresolved": vis["unresolved"],
    }


def summarize_delays(delays: list) -> dict:
    if not delays:
        return {"count": 0}
    arr = np.asarray(delays, dtype=float)
    return {
        "count": len(delays),
        "max_ns": int(arr.max()),
        "p50_ns": int(np.percentile(arr, 50)),
        "p90_ns": int(np.percentile(arr, 90)),
        "p99_ns": int(np.percentile(arr, 99)),
        "mean_ns": float(arr.mean()),
    }


def sawtooth_period_ns(series: list, interval_ns: int,
                       bin_ns: int = None) -> dict:
    """Estimate the dominant period of the delay-vs-commit-time signal.

    The series is resampled onto a uniform grid (empty bins carry the
    previous value forward), mean-removed, and autocorrelated; the
    strongest lag in [0.4, 1.6] x the expected interval is reported.
    A sawtooth of period P shows its first autocorrelation peak at P.
    """
    if bin_ns is None:
        bin_ns = max(1, interval_ns // 20)
    if len(series) < 8:
        return {"ok": False, "reason": "too few points"}
    t0 = series[0][0]
    span = series[-1][0] - t0
    nbins = span // bin_ns + 1
    if nbins < 3 * (interval_ns // bin_ns):
        return {"ok": False, "reason": "run too short for autocorrelation"}
    sums = np.zeros(nbins)
    counts = np.zeros(nbins)
    for t, d in series:
        b = (t - t0) // bin_ns
        sums[b] += d
        counts[b] += 1
    sig = np.empty(nbins)
    last = 0.0
    for i in range(nbins):
        if counts[i]:
            last = sums[i] / counts[i]
        sig[i] = last
    sig = sig - sig.mean()
    denom = float(np.dot(sig, sig))
    if denom == 0.0:
        return {"ok": False, "reason": "flat signal"}
    ac = np.correlate(sig, sig, mode="full")[nbins - 1:] / denom
    lo = max(1, int(0.4 * interval_ns / bin_ns))
    hi = min(nbins - 1, int(1.6 * interval_ns / bin_ns))
    if hi <= lo:
        return {"ok": False, "reason": "grid too coarse"}
    window = ac[lo:hi + 1]
    peak = lo + int(np.argmax(window))
    return {
        "ok": True,
        "period_ns": peak * bin_ns,
        "peak_corr": float(ac[peak]),
        "bin_ns": bin_ns,
    }


def latency_summary(h: History) -> dict:
    """Client-observed transaction latency, split by outcome."""
    out = {}
    for status in ("committed", "aborted"):
        vals = [t.end_ns - t.begin_ns for t in h.txns.values()
                if t.status == status and t.end_ns is not None]
        if not vals:
            continue
        arr = np.asarray(vals, dtype=float)
        out[status] = {
            "count": len(vals),
            "p50_ms": float(np.percentile(arr, 50)) / MS,
            "p99_ms": float(np.percentile(arr, 99)) / MS,
            "max_ms": float(arr.max()) / MS,
        }
    return out


def run_summary(result) -> dict:
    """Flat dict for the CLI: outcome counts, latency, batching stats."""
    h = result.history()
    sc = result.scenario
    ts_req = result.ts_requests
    summary = {
        "seed": sc.seed,
        "txns": len(result.txns),
        "committed": result.committed,
        "aborted": result.aborted,
        "failed": result.failed,
        "unknown": result.unknown,
        "abort_reasons": dict(result.abort_reasons),
        "latency": latency_summary(h),
        "ts_requests": ts_req,
        "ts_fetches": result.ts_fetches,
        "ts_served_local": result.ts_local,
        "ts_local_ratio": (result.ts_local / ts_req) if ts_req else None,
        "replica_reads": len(h.rreads),
        "epoch_cuts": len(h.cuts),
    }
    replicas_of = result.replicas_of()
    vis = visibility_delays(
        h, replicas_of=replicas_of,
        written_primaries=result.written_primaries if replicas_of else None)
    delays = [d for _t, d in vis["series"]]
    if delays:
        summary["visibility"] = summarize_delays(delays)
        summary["visibility"]["unresolved"] = vis["unresolved"]
        shape = sawtooth_period_ns(vis["series"], sc.interval_ms * MS)
        if shape.get("ok"):
            summary["visibility"]["sawtooth_period_ms"] = \
                shape["period_ns"] / MS
    return summary
