"""Multi-version timestamp-ordered storage and the primary data node.

Each key keeps a chain of committed versions plus at most a handful of
undecided write intents. Reads at timestamp ``ts`` must not answer while
any intent below ``ts`` is undecided — instead of guessing, the reader
pushes the writer's recorder for the verdict and rescans. Writes below a
key's read timestamp are rejected (a reader already took a snapshot that
the write would retroactively invalidate); everything else is accepted
optimistically and settled by the recorder later.

The node's durable state is a single ordered log per node (intents,
finalizes, epoch cut markers) in region-local shared storage, plus one
record stream per recorder role. Recovery is a replay of those streams;
the read-timestamp cache is intentionally not logged, so a restarted node
refuses writes below a conservative floor instead (the last promised cut
boundary or a fresh timestamp, whichever is higher).
"""

from __future__ import annotations

import bisect
from typing import Optional

from .coordinator import RecorderState, TxnRecord, _RoleState
from .epochs import EpochCutter, promised_end_ns
from .errors import OracleUnavailable
from .messages import (
    ABORT,
    ABORTED,
    COMMIT,
    COMMITTED,
    CatchUp,
    DecideReq,
    FinalizeReq,
    FinalizeResp,
    Heartbeat,
    LogShip,
    NotOwner,
    PushReq,
    ReadReq,
    ReadResp,
    RecordCreate,
    RecordCreated,
    WriteReq,
    WriteResp,
)
from .replication import (
    CutEntry,
    FinalizeEntry,
    IntentEntry,
    RecordEntry,
)
from .simnet import MS, RPC_TIMEOUT, Future, Node
from .tsbatch import Timestamp, TsProxy


class WriteIntent:
    __slots__ = ("txn", "ts", "value", "role", "proposal")

    def __init__(self, txn: str, ts: Timestamp, value, role: str, proposal: int):
        self.txn = txn
        self.ts = ts
        self.value = value
        self.role = role
        self.proposal = proposal


class KeyChain:
    __slots__ = ("versions", "order", "intents", "rt")

    def __init__(self):
        self.versions: dict[Timestamp, tuple] = {}  # ts -> (value, epoch)
        self.order: list[Timestamp] = []
        self.intents: dict[str, WriteIntent] = {}
        self.rt: Optional[Timestamp] = None

    def visible(self, ts: Timestamp):
        """Newest committed version at or below ts -> (vts, value)."""
        i = bisect.bisect_right(self.order, ts) - 1
        if i < 0:
            return None, None
        vts = self.order[i]
        return vts, self.versions[vts][0]


class KeyStore:
    """Version chains plus transaction bookkeeping shared by primaries,
    replicas and recovery replay."""

    def __init__(self):
        self.chains: dict[str, KeyChain] = {}
        self.decided: dict[str, tuple] = {}  # txn -> (decision, epoch)
        self.txn_keys: dict[str, dict] = {}  # txn -> {key: True}

    def touch(self, key: str) -> KeyChain:
        chain = self.chains.get(key)
        if chain is None:
            chain = self.chains[key] = KeyChain()
        return chain

    def insert_version(self, key: str, ts: Timestamp, value, epoch) -> None:
        # Last write wins: one transaction's later intent for the same key
        # supersedes the earlier one even when they fold in separately
        # (e.g. the commit record outran the intents to a replica).
        chain = self.touch(key)
        if ts not in chain.versions:
            bisect.insort(chain.order, ts)
        chain.versions[ts] = (value, epoch)

    def insert_intent(self, key: str, intent: WriteIntent) -> None:
        self.touch(key).intents[intent.txn] = intent
        self.txn_keys.setdefault(intent.txn, {})[key] = True

    def resolve(self, txn: str, decision: str, epoch) -> bool:
        """Settle a transaction: drop or promote its intents. Idempotent;
        works even when the outcome arrives before any intent has."""
        if txn in self.decided:
            return False
        self.decided[txn] = (decision, epoch)
        for key in self.txn_keys.pop(txn, ()):
            intent = self.chains[key].intents.pop(txn, None)
            if intent is not None and decision == COMMIT:
                self.insert_version(key, intent.ts, intent.value, epoch)
        return True


def apply_log_entry(store: KeyStore, entry) -> Optional[int]:
    """Replay one durable log entry into a store. Returns the epoch number
    when the entry is a cut marker, else None. Used verbatim by crash
    recovery and by replicas, so ordering quirks (outcome landing before
    the intent it settles) are handled here once."""
    if isinstance(entry, IntentEntry):
        if entry.txn in store.decided:
            decision, epoch = store.decided[entry.txn]
            if decision == COMMIT:
                store.insert_version(entry.key, entry.ts, entry.value, epoch)
        else:
            store.insert_intent(
                entry.key,
                WriteIntent(entry.txn, entry.ts, entry.value, entry.role,
                            entry.proposal),
            )
        return None
    if isinstance(entry, FinalizeEntry):
        store.resolve(entry.txn, entry.decision, entry.epoch)
        return None
    if isinstance(entry, CutEntry):
        return entry.epoch
    if isinstance(entry, RecordEntry):
        if entry.status == COMMITTED:
            store.resolve(entry.txn, COMMIT, entry.epoch)
        elif entry.status == ABORTED:
            store.resolve(entry.txn, ABORT, None)
        return None
    raise TypeError(f"unknown log entry {entry!r}")


class DataNode(Node):
    """Primary for a key range; also hosts a recorder and an epoch cutter."""

    kind = "data"

    def __init__(self, sim, net, node_id, region, drift_ppm, storage, directory,
                 tsproxy_args, ship_map, interval_ns, uncertainty_wait_ns,
                 max_drift_ppm, hb_timeout_ns=None, sweep_interval_ns=None):
        super().__init__(sim, net, node_id, region, drift_ppm)
        self.storage = storage
        self.stream = node_id  # this node's data log
        self.role_self = f"rec/{node_id}"
        self.ship_map = ship_map
        self._tsproxy_args = tsproxy_args
        self._recorder_args = {}
        if hb_timeout_ns is not None:
            self._recorder_args["hb_timeout_local_ns"] = hb_timeout_ns
        if sweep_interval_ns is not None:
            self._recorder_args["sweep_interval_ns"] = sweep_interval_ns
        self.tsproxy = TsProxy(self.k, **tsproxy_args)
        self.membership = directory
        self.recorder = RecorderState(self, **self._recorder_args)
        self.cutter = EpochCutter(self, interval_ns, max_drift_ppm,
                                  uncertainty_wait_ns)
        self.store = KeyStore()
        self.rt_floor: Optional[int] = None
        self.ready = True
        self._decided_fut: dict[str, Future] = {}
        self._push_inflight: dict[str, bool] = {}

    def epoch_now(self) -> int:
        return self.cutter.epoch_now()

    def start(self) -> None:
        self.recorder.claim_initial(self.role_self)
        self.recorder.start()
        self.cutter.start()

    # -- wire dispatch ---------------------------------------------------------

    def handle(self, env) -> None:
        p = env.payload
        if isinstance(p, Heartbeat):
            self.recorder.on_heartbeat(p.coordinator)
            return
        if isinstance(p, CatchUp):
            self.k.spawn(self._serve_catchup(env, p))
            return
        if not self.ready:
            return  # recovering: stay silent, senders retry
        if isinstance(p, ReadReq):
            self.k.spawn(self._read_task(env, p))
        elif isinstance(p, WriteReq):
            self.k.spawn(self._write_task(env, p))
        elif isinstance(p, FinalizeReq):
            known = self._apply_finalize(p.txn, p.decision, p.epoch)
            self.k.reply(env, FinalizeResp(known))
        elif isinstance(p, DecideReq):
            self.recorder.handle_decide(env, p)
        elif isinstance(p, PushReq):
            self.recorder.handle_push(env, p)
        elif isinstance(p, RecordCreate):
            self.recorder.handle_record_create(env, p)

    # -- reads -------------------------------------------------------------------

    def _read_task(self, env, r: ReadReq):
        chain = self.store.touch(r.key)
        pushed = []
        while True:
            blocker = None
            for txn, intent in chain.intents.items():
                if intent.ts < r.ts and txn != r.reader:
                    blocker = (txn, intent.role)
                    break
            if blocker is None:
                break
            txn, role = blocker
            if txn not in pushed:
                pushed.append(txn)
            yield from self._await_decision(txn, role, r.reader)
        if chain.rt is None or r.ts > chain.rt:
            chain.rt = r.ts
        vts, value = chain.visible(r.ts)
        self.k.reply(env, ReadResp(value, vts, pushed))

    def _await_decision(self, txn: str, role: str, reader: str):
        if txn in self.store.decided:
            return
        self.k.trace("push_wait", node=self.node_id, reader=reader, txn=txn)
        fut = self._decided_fut.get(txn)
        if fut is None:
            fut = self._decided_fut[txn] = Future(self.sim)
        if txn not in self._push_inflight:
            self._push_inflight[txn] = True
            self.k.spawn(self._push_task(txn, role))
        yield fut
        self.k.trace("push_done", node=self.node_id, reader=reader, txn=txn)

    def _push_task(self, txn: str, role: str):
        attempts = 0
        while txn not in self.store.decided:
            attempts += 1
            if attempts > 300:
                self.k.trace("push_stuck", node=self.node_id, txn=txn)
                self._push_inflight.pop(txn, None)
                return
            owner = yield from self.membership.lookup(role)
            if owner is None:
                yield self.k.sleep_local(5 * MS)
                continue
            timeout = max(self.k.rpc_timeout_for(owner), 30 * MS)
            resp = yield self.k.rpc(owner, PushReq(role, txn, self.node_id), timeout)
            if resp is RPC_TIMEOUT:
                self.membership.invalidate(role)
                continue
            if isinstance(resp, NotOwner):
                self.membership.invalidate(role)
                yield self.k.sleep_local(1 * MS)
                continue
            self._apply_finalize(txn, resp.decision, resp.epoch)
        self._push_inflight.pop(txn, None)

    # -- writes -------------------------------------------------------------------

    def _write_task(self, env, w: WriteReq):
        if w.txn in self.store.decided:
            # Late retry of a settled transaction; nothing left to promise.
            self.k.reply(env, WriteResp(True, None))
            return
        chain = self.store.touch(w.key)
        intent = chain.intents.get(w.txn)
        if intent is None:
            if (chain.rt is not None and w.ts < chain.rt) or \
                    (self.rt_floor is not None and w.ts.nanos < self.rt_floor):
                self.k.reply(env, WriteResp(False, None))
                return
            intent = WriteIntent(w.txn, w.ts, w.value, w.role, self.epoch_now())
            self.store.insert_intent(w.key, intent)
        else:
            intent.value = w.value
        entry = IntentEntry(w.txn, w.key, w.ts, w.value, w.role, intent.proposal)
        flush = self.append_log([entry])
        ok = True
        if w.first:
            ok = yield from self._ensure_record(w)
        yield flush
        if not ok:
            self.k.reply(env, WriteResp(False, None))
            return
        self.k.reply(env, WriteResp(True, intent.proposal))

    def _ensure_record(self, w: WriteReq):
        """Generator -> bool: the recorder role has a durable in-progress
        record for this transaction. Usually local; after a takeover the
        request chases the membership register."""
        if self.recorder.owns(w.role):
            ok = yield from self.recorder.create_in_progress(
                w.role, w.txn, w.coordinator)
            if ok:
                return True
        for i in range(6):
            owner = yield from self.membership.lookup(w.role)
            if owner is None:
                yield self.k.sleep_local(5 * MS)
                continue
            if owner == self.node_id and self.recorder.owns(w.role):
                ok = yield from self.recorder.create_in_progress(
                    w.role, w.txn, w.coordinator)
                if ok:
                    return True
                continue
            req = RecordCreate(w.role, w.txn, w.coordinator)
            resp = yield self.k.rpc(owner, req, self.k.rpc_timeout_for(owner))
            if isinstance(resp, RecordCreated) and resp.ok:
                return True
            self.membership.invalidate(w.role)
            if resp is RPC_TIMEOUT:
                yield self.k.sleep_local(min(2 * MS * (i + 1), 20 * MS))
        return False

    # -- settling -----------------------------------------------------------------

    def _apply_finalize(self, txn: str, decision: str, epoch, log: bool = True) -> bool:
        known = txn in self.store.txn_keys or txn in self.store.decided
        if self.store.resolve(txn, decision, epoch) and log:
            self.append_log([FinalizeEntry(txn, decision, epoch)])
        fut = self._decided_fut.pop(txn, None)
        if fut is not None and not fut.done:
            fut.resolve((decision, epoch))
        self._push_inflight.pop(txn, None)
        return known

    # -- durable log ----------------------------------------------------------------

    def append_log(self, entries: list) -> Future:
        fut = self.storage.append(self.stream, entries, writer=self.node_id)

        def shipped(res):
            if res[0] == "ok":
                self.ship_stream(self.stream, res[1], entries)

        fut.add_done(shipped)
        return fut

    def ship_stream(self, stream: str, start: int, entries: list) -> None:
        for dst in self.ship_map.get(stream, ()):
            self.k.send(dst, LogShip(stream, start, entries))

    def _serve_catchup(self, env, req: CatchUp):
        entries = yield self.storage.read_stream(req.stream, req.have)
        if entries:
            self.k.send(env.src, LogShip(req.stream, req.have, entries))

    # -- crash recovery ---------------------------------------------------------------

    def on_restart(self) -> None:
        # alive: the network delivers again (and our own tasks may run);
        # ready stays False so data-plane requests are ignored until the
        # durable streams have been replayed.
        self.alive = True
        self.ready = False
        self.store = KeyStore()
        self._decided_fut = {}
        self._push_inflight = {}
        self.tsproxy = TsProxy(self.k, **self._tsproxy_args)
        self.recorder = RecorderState(self, **self._recorder_args)
        self.k.spawn(self._recover())

    def _recover(self):
        entries = yield self.storage.read_stream(self.stream)
        cuts = 0
        for e in entries:
            ep = apply_log_entry(self.store, e)
            if ep is not None and ep > cuts:
                cuts = ep
        self.cutter.resume_at(cuts)
        # Reload whichever record streams the membership register still
        # assigns to this node (its own role, plus any it had adopted).
        roles = yield self.storage.list_roles_owned(self.node_id)
        for role in roles:
            rentries = yield self.storage.read_stream(role)
            records = {}
            for e in rentries:
                if isinstance(e, RecordEntry):
                    records[e.txn] = TxnRecord(e.status, e.epoch, e.coordinator)
            self.recorder.roles[role] = _RoleState(records)
        # The read-timestamp cache died with the process. Refuse writes
        # below a floor no pre-crash read can have exceeded: the next
        # timestamp the oracle hands out, or the last promised cut end.
        while True:
            try:
                fresh = yield from self.tsproxy.acquire()
                break
            except OracleUnavailable:
                yield self.k.sleep_local(5 * MS)
        self.rt_floor = max(promised_end_ns(cuts, self.cutter.interval_ns),
                            fresh.nanos)
        self.recorder.start()
        self.cutter.start()
        self.ready = True
        self.k.trace("recovered", node=self.node_id, cuts=cuts,
                     rt_floor=self.rt_floor)
