"""Correctness checkers over run histories.

All checkers are pure functions History -> Verdict. The serializability
argument is split the way the system earns it: committed transactions
applied in timestamp order must reproduce every read (the timestamp
order *is* the serial order), and whenever one transaction releases
before another begins, the earlier one must carry the smaller timestamp
(so the serial order extends real time). Together these are strict
serializability; a brute-force oracle for small histories double-checks
the definition directly by searching interleavings.

A transaction whose client never learned the outcome (decide reply lost)
is settled here by its durable record when one exists; only truly
unresolved transactions stay wildcards.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .epochs import ceiling_epoch, promised_end_ns
from .history import History, TxnInfo
from .messages import COMMITTED, IN_PROGRESS
from .tsbatch import Timestamp


@dataclass
class Verdict:
    name: str
    ok: bool = True
    checked: int = 0
    violations: list = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok

    def flag(self, msg: str) -> None:
        self.ok = False
        if len(self.violations) < 50:
            self.violations.append(msg)

    def summary(self) -> str:
        state = "ok" if self.ok else f"FAIL ({len(self.violations)} violations)"
        out = f"{self.name}: {state} [{self.checked} checks]"
        for v in self.violations[:5]:
            out += f"\n  - {v}"
        return out


def _has_writes(t: TxnInfo) -> bool:
    return any(op[1] == "w" for op in t.ops)


def _final_writes(t: TxnInfo) -> dict:
    buf: dict = {}
    for _i, kind, key, _vts, val in sorted(t.ops):
        if kind == "w":
            buf[key] = val
    return buf


def terminal_records(h: History) -> dict:
    """txn -> (status, epoch, t) from the first terminal record."""
    out: dict = {}
    for t, _role, txn, status, epoch in h.records:
        if status != IN_PROGRESS and txn not in out:
            out[txn] = (status, epoch, t)
    return out


def effective_outcomes(h: History) -> dict:
    """txn -> (status, epoch). Client-visible outcome, with unknowns
    settled by their durable record where one exists."""
    records = terminal_records(h)
    out: dict = {}
    for t in h.txns.values():
        status, epoch = t.status, t.epoch
        if status in ("unknown", None, "failed"):
            rec = records.get(t.txn)
            if rec is not None:
                status = "committed" if rec[0] == COMMITTED else "aborted"
                epoch = rec[1]
            elif status is None:
                status = "unknown"
        out[t.txn] = (status, epoch)
    return out


# ---------------------------------------------------------------------------
# timestamps


def check_timestamp_property(h: History) -> Verdict:
    """Every committed transaction's timestamp lies strictly inside its
    true begin/release interval."""
    v = Verdict("timestamp-in-lifetime")
    for t in h.txns.values():
        if not t.committed or t.ts is None:
            continue
        v.checked += 1
        if not (t.begin_ns < t.ts.nanos < t.end_ns):
            v.flag(f"{t.txn}: ts={t.ts.nanos} outside "
                   f"({t.begin_ns}, {t.end_ns})")
    return v


def check_oracle_bounds(h: History, epsilon_ns: int) -> Verdict:
    """Oracle readings contain the sampling instant, have exact width
    2*epsilon, and per-server upper bounds strictly increase."""
    v = Verdict("oracle-bounds")
    last_hi: dict = {}
    for t, srv, lo, hi in h.oracle:
        v.checked += 1
        if not (lo <= t <= hi):
            v.flag(f"srv{srv}@{t}: [{lo},{hi}] misses true instant")
        if hi - lo != 2 * epsilon_ns:
            v.flag(f"srv{srv}@{t}: width {hi - lo} != {2 * epsilon_ns}")
        if srv in last_hi and hi <= last_hi[srv]:
            v.flag(f"srv{srv}@{t}: upper bound {hi} <= previous {last_hi[srv]}")
        last_hi[srv] = hi
    return v


# ---------------------------------------------------------------------------
# strict serializability


def _replay_reads(txn: TxnInfo, store: dict, v: Verdict = None) -> bool:
    """Replay one transaction's ops against ``store`` (key -> (ts, value)),
    honoring read-own-writes. Returns True when every traced read matches."""
    buf: dict = {}
    ok = True
    for i, kind, key, vts, val in sorted(txn.ops):
        if kind == "w":
            buf[key] = val
            continue
        if key in buf:
            exp_ts, exp_val = txn.ts, buf[key]
        else:
            exp_ts, exp_val = store.get(key, (None, None))
        if val != exp_val or vts != exp_ts:
            ok = False
            if v is not None:
                v.flag(f"{txn.txn} op{i} read {key}: saw "
                       f"({vts and vts.nanos}, {val!r}), serial order implies "
                       f"({exp_ts and exp_ts.nanos}, {exp_val!r})")
    return ok


def check_strict_serializability(h: History, initial: dict = None) -> Verdict:
    """Committed transactions, replayed in timestamp order, must reproduce
    every read; and timestamp order must extend real-time order."""
    v = Verdict("strict-serializability")
    outcomes = effective_outcomes(h)
    committed = [t for t in h.txns.values()
                 if t.committed and t.ts is not None]
    # Record-settled commits take effect in the replay but carry no
    # client-visible release, so they impose no real-time edge.
    ghost = [t for t in h.txns.values()
             if not t.committed and t.ts is not None
             and outcomes[t.txn][0] == "committed"]

    # (a) real time: whoever released before I began must order below me.
    by_begin = sorted(committed, key=lambda t: t.begin_ns)
    by_end = sorted(committed, key=lambda t: t.end_ns)
    done_i = 0
    max_done = None
    for t in by_begin:
        while done_i < len(by_end) and by_end[done_i].end_ns < t.begin_ns:
            if max_done is None or by_end[done_i].ts > max_done.ts:
                max_done = by_end[done_i]
            done_i += 1
        v.checked += 1
        if max_done is not None and max_done.ts >= t.ts:
            v.flag(f"real-time order inverted: {max_done.txn} "
                   f"(ts={max_done.ts.nanos}, ended {max_done.end_ns}) vs "
                   f"{t.txn} (ts={t.ts.nanos}, began {t.begin_ns})")

    # (b) reads: timestamp order is the serial order.
    store = {k: (None, val) for k, val in (initial or {}).items()}
    for t in sorted(committed + ghost, key=lambda t: t.ts):
        v.checked += 1
        if t in ghost:
            # Reads of a never-released transaction were never exposed.
            for key, val in _final_writes(t).items():
                store[key] = (t.ts, val)
            continue
        _replay_reads(t, store, v)
        for key, val in _final_writes(t).items():
            store[key] = (t.ts, val)
    return v


def _replay_values_only(txn: TxnInfo, store: dict) -> bool:
    """Replay against ``store`` (key -> value), then apply writes in place.
    The brute-force oracle compares values only: version timestamps are an
    implementation detail the definition of serializability doesn't see."""
    buf: dict = {}
    for _i, kind, key, _vts, val in sorted(txn.ops):
        if kind == "w":
            buf[key] = val
        elif buf.get(key, store.get(key)) != val:
            return False
    store.update(buf)
    return True


def brute_force_serializable(txns: list, initial: dict = None):
    """Search for any total order that respects real time and reproduces
    all reads (values only). Returns a witness order or None. Factorial:
    only sensible for small histories."""
    txns = [t for t in txns if t.committed]
    store0 = dict(initial or {})

    def extend(order, remaining, store):
        if not remaining:
            return order
        for idx, t in enumerate(remaining):
            # t may go next only if nothing unscheduled released before
            # t began (such a transaction must precede t in real time).
            if any(u.end_ns < t.begin_ns for u in remaining if u is not t):
                continue
            trial = dict(store)
            if not _replay_values_only(t, trial):
                continue
            found = extend(order + [t],
                           remaining[:idx] + remaining[idx + 1:], trial)
            if found is not None:
                return found
        return None

    return extend([], list(txns), store0)


# ---------------------------------------------------------------------------
# synthetic histories for cross-validating the two checkers


def synthesize_history(rng, txn_count: int = 5, key_count: int = 3,
                       corrupt: str = "none") -> History:
    """Build a small history with known ground truth.

    ``corrupt="none"`` yields a genuinely serializable run: overlapping
    intervals, each containing its commit point, reads filled in from the
    serial order (interval containment makes real-time order agree with
    commit order automatically). ``"fabricate"`` rewrites one read to a
    value no write ever produced; ``"stale_chain"`` builds a strictly
    sequential run — a unique admissible order — and points one read at
    an outdated version. Both corruptions are unserializable by
    construction, so the fast checker and the brute-force oracle must
    agree on every output of this generator."""
    keys = [f"x{i}" for i in range(key_count)]
    sequential = corrupt == "stale_chain"
    h = History()
    store: dict = {}
    t_cursor = 1000
    for n in range(txn_count):
        if sequential:
            begin = t_cursor + rng.randrange(5, 20)
            dur = rng.randrange(10, 30)
            end = begin + dur
            commit_at = begin + dur // 2
            t_cursor = end
        else:
            commit_at = t_cursor
            begin = commit_at - rng.randrange(5, 400)
            end = commit_at + rng.randrange(5, 400)
            t_cursor += rng.randrange(20, 120)
        ts = Timestamp(commit_at, 0)
        txn = TxnInfo(f"t{n}", begin_ns=begin, end_ns=end,
                      status="committed", ts=ts)
        buf: dict = {}
        for i in range(rng.randrange(1, 4)):
            key = keys[rng.randrange(len(keys))]
            if rng.random() < 0.5:
                val = f"t{n}.{i}"
                txn.ops.append((i, "w", key, None, val))
                buf[key] = val
            else:
                if key in buf:
                    vts, val = ts, buf[key]
                else:
                    vts, val = store.get(key, (None, None))
                txn.ops.append((i, "r", key, vts, val))
        for key, val in buf.items():
            store[key] = (ts, val)
        h.txns[txn.txn] = txn
    if corrupt == "fabricate":
        _corrupt_fabricate(rng, h)
    elif corrupt == "stale_chain":
        _corrupt_stale(rng, h)
    return h


def _corrupt_fabricate(rng, h: History) -> None:
    reads = [(txn, op) for txn in h.txns.values()
             for op in txn.ops if op[1] == "r"]
    if not reads:
        txn = next(iter(h.txns.values()))
        txn.ops.append((len(txn.ops), "r", "x0", Timestamp(1, 0),
                        "value-from-nowhere"))
        return
    txn, op = reads[rng.randrange(len(reads))]
    i, _kind, key, _vts, _val = op
    txn.ops[txn.ops.index(op)] = (i, "r", key, Timestamp(1, 0),
                                  "value-from-nowhere")


def _corrupt_stale(rng, h: History) -> None:
    """In a sequential history, point the last transaction's read at a
    version one writer too old (planting the two writes if needed)."""
    txns = sorted(h.txns.values(), key=lambda t: t.ts)
    if len(txns) < 3:
        return _corrupt_fabricate(rng, h)
    w1, w2, victim = txns[0], txns[1], txns[-1]
    key = "x0"
    for t in (w1, w2, victim):
        t.ops = [op for op in t.ops if op[2] != key]
    w1.ops.append((len(w1.ops), "w", key, None, "old-version"))
    w2.ops.append((len(w2.ops), "w", key, None, "new-version"))
    victim.ops.append((len(victim.ops), "r", key, w1.ts, "old-version"))


# ---------------------------------------------------------------------------
# dirty reads and the single commit point


def check_commit_records(h: History) -> Verdict:
    """Per transaction: at most one terminal record, agreeing with what the
    client was told; and no read anywhere observes a value whose writer
    did not commit."""
    v = Verdict("commit-records")
    terminal: dict = {}
    for _t, _role, txn, status, _epoch in h.records:
        if status == IN_PROGRESS:
            continue
        v.checked += 1
        if txn in terminal and terminal[txn] != status:
            v.flag(f"{txn}: decided both {terminal[txn]} and {status}")
        terminal.setdefault(txn, status)
    for t in h.txns.values():
        if t.status == "committed" and _has_writes(t):
            v.checked += 1
            if terminal.get(t.txn) != COMMITTED:
                v.flag(f"{t.txn}: client saw commit, record says "
                       f"{terminal.get(t.txn)!r}")
        elif t.status == "aborted":
            v.checked += 1
            if terminal.get(t.txn) == COMMITTED:
                v.flag(f"{t.txn}: client saw abort, record says committed")

    outcomes = effective_outcomes(h)
    writer_status: dict = {}
    for t in h.txns.values():
        status = outcomes[t.txn][0]
        for _i, kind, key, _vts, val in t.ops:
            if kind == "w":
                writer_status[(key, val)] = status

    def observed(key, val, where):
        if val is None:
            return
        v.checked += 1
        status = writer_status.get((key, val))
        if status is None:
            v.flag(f"{where}: read {val!r} from {key}, never written")
        elif status not in ("committed", "unknown"):
            v.flag(f"{where}: read {val!r} from {key}, writer was {status}")

    for t in h.txns.values():
        own = {key for _i, kind, key, _vts, _val in t.ops if kind == "w"}
        for _i, kind, key, _vts, val in t.ops:
            if kind == "r" and key not in own:
                observed(key, val, t.txn)
    for rr in h.rreads:
        for key, _vts, val in rr.reads:
            observed(key, val, f"replica-read {rr.reader}")
    return v


# ---------------------------------------------------------------------------
# epochs and replicas


def check_epoch_cuts(h: History, interval_ns: int) -> Verdict:
    """Cut markers are logged strictly after their promised instant, carry
    the right promise, and every node's cut sequence covers 1..max."""
    v = Verdict("epoch-cuts")
    per_node: dict = {}
    for t, node, epoch, promised in h.cuts:
        v.checked += 1
        if promised != promised_end_ns(epoch, interval_ns):
            v.flag(f"{node} cut {epoch}: promised {promised} != "
                   f"{promised_end_ns(epoch, interval_ns)}")
        if t <= promised:
            v.flag(f"{node} cut {epoch}: logged at {t} <= promised {promised}")
        per_node.setdefault(node, []).append(epoch)
    for node, epochs in per_node.items():
        missing = set(range(1, max(epochs) + 1)) - set(epochs)
        if missing:
            v.flag(f"{node}: cut sequence has gaps {sorted(missing)[:5]}")
    return v


def check_replica_consistency(h: History, interval_ns: int) -> Verdict:
    """Every replica read returns, per key, the newest committed version
    with ts <= read-ts whose commit epoch fits inside the read's view."""
    v = Verdict("replica-reads")
    outcomes = effective_outcomes(h)
    versions: dict = {}  # key -> [(ts, epoch, value)] sorted by ts
    maybe: dict = {}     # key -> {value}: outcome genuinely unresolved
    for t in h.txns.values():
        status, epoch = outcomes[t.txn]
        if t.ts is None:
            continue
        if status == "committed":
            for key, val in _final_writes(t).items():
                versions.setdefault(key, []).append((t.ts, epoch, val))
        elif status == "unknown":
            for key, val in _final_writes(t).items():
                maybe.setdefault(key, set()).add(val)
    for chain in versions.values():
        chain.sort()

    for rr in h.rreads:
        expected_view = ceiling_epoch(rr.ts.nanos, interval_ns)
        v.checked += 1
        if rr.view != expected_view:
            v.flag(f"{rr.reader}: view {rr.view} != ceil(ts/interval) "
                   f"{expected_view}")
            continue
        for key, vts, val in rr.reads:
            v.checked += 1
            exp = None
            for ts, epoch, value in reversed(versions.get(key, ())):
                if ts <= rr.ts and epoch is not None and epoch <= rr.view:
                    exp = (ts, value)
                    break
            got = None if vts is None else (vts, val)
            if got == exp:
                continue
            if got is not None and val in maybe.get(key, ()):
                continue
            v.flag(f"{rr.reader} {key}@{rr.ts.nanos}/view{rr.view}: "
                   f"saw {got}, expected {exp}")
    return v


def check_visibility_monotonic(h: History) -> Verdict:
    """Per replica, replayed epochs advance by exactly one."""
    v = Verdict("replay-monotonic")
    per_replica: dict = {}
    for _t, node, _src, epoch in h.replays:
        v.checked += 1
        prev = per_replica.get(node, 0)
        if epoch != prev + 1:
            v.flag(f"{node}: replayed {epoch} after {prev}")
        per_replica[node] = epoch
    return v


# ---------------------------------------------------------------------------
# liveness


def check_deadlock_freedom(h: History) -> Verdict:
    """Waits-for cycle detector over read-blocked-on-intent windows.

    An edge waiter -> writer-txn is live from push_wait to the matching
    push_done. Writers never wait for other transactions (only for their
    own commit wait), so the protocol claims this graph never has a
    cycle; verify it on every edge insertion."""
    v = Verdict("deadlock-freedom")
    out: dict = {}  # waiter -> {writer txn: count}
    active: dict = {}

    def reaches(src, dst, seen):
        if src == dst:
            return True
        if src in seen:
            return False
        seen.add(src)
        return any(reaches(n, dst, seen) for n in out.get(src, ()))

    for t, kind, node, reader, txn in h.pushes:  # already in event order
        key = (node, reader, txn)
        if kind == "push_wait":
            v.checked += 1
            if reaches(txn, reader, set()):
                v.flag(f"waits-for cycle closed by {reader} -> {txn} "
                       f"at {t} on {node}")
            out.setdefault(reader, {})[txn] = \
                out.get(reader, {}).get(txn, 0) + 1
            active[key] = True
        elif active.pop(key, None):
            edges = out.get(reader)
            if edges and txn in edges:
                edges[txn] -= 1
                if edges[txn] == 0:
                    del edges[txn]
                if not edges:
                    del out[reader]
    return v


def check_push_progress(h: History, end_ns: int = None,
                        tail_grace_ns: int = 500_000_000) -> Verdict:
    """Every reader that suspended on an undecided write eventually got an
    answer, and waits only ever point from a higher-timestamp reader to a
    lower-timestamp writer — the shape that makes cycles impossible.
    Waits still open when the run ends are excused only if the outcome
    arrived within the grace window of the end."""
    v = Verdict("push-progress")
    if not h.pushes:
        return v
    if end_ns is None:
        end_ns = max(t for t, *_ in h.pushes)
    records = terminal_records(h)
    open_waits: dict = {}
    for t, kind, node, reader, txn in h.pushes:
        if kind == "push_wait":
            open_waits[(node, reader, txn)] = t
            waiter = h.txns.get(reader)
            writer = h.txns.get(txn)
            if waiter and writer and waiter.ts and writer.ts \
                    and waiter.ts <= writer.ts:
                v.flag(f"{reader} (ts={waiter.ts.nanos}) waited on {txn} "
                       f"(ts={writer.ts.nanos}): wait points up, not down")
        else:
            open_waits.pop((node, reader, txn), None)
            v.checked += 1
    for (node, reader, txn), t in open_waits.items():
        rec = records.get(txn)
        if rec is not None and end_ns - rec[2] > tail_grace_ns:
            v.flag(f"{reader}@{node} still waiting on {txn}, decided "
                   f"{end_ns - rec[2]}ns before the run ended")
    return v


# ---------------------------------------------------------------------------
# debugging aid


def shrink_counterexample(items: list, still_fails, budget: int = 1000) -> list:
    """Greedy delta-debugger: drop items while the predicate keeps
    failing. ``still_fails(subset) -> bool``."""
    current = list(items)
    spent = 0
    improved = True
    while improved and spent < budget:
        improved = False
        for i in range(len(current) - 1, -1, -1):
            if spent >= budget:
                break
            trial = current[:i] + current[i + 1:]
            spent += 1
            if still_fails(trial):
                current = trial
                improved = True
    return current


def run_all_checks(h: History, interval_ns: int, epsilon_ns: int,
                   end_ns: int = None) -> list:
    return [
        check_timestamp_property(h),
        check_oracle_bounds(h, epsilon_ns),
        check_strict_serializability(h),
        check_commit_records(h),
        check_epoch_cuts(h, interval_ns),
        check_replica_consistency(h, interval_ns),
        check_visibility_monotonic(h),
        check_deadlock_freedom(h),
        check_push_progress(h, end_ns=end_ns),
    ]
