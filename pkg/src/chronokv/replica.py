"""Read-only replicas driven by shipped logs and promised epochs.

A replica applies its primary's durable log strictly in order. A segment
arriving ahead of the prefix is parked, not applied: usually the missing
piece is just jittered and lands a moment later, so parking costs
nothing, while a catch-up request naming the prefix we already have
covers the genuinely-dropped case. Applying the cut marker for epoch
``n`` makes views 1..n servable: a read at timestamp ``ts`` belongs to
view ``ceil(ts / interval)`` and blocks until that view has replayed. No
commit with an epoch at or below ``n`` can be durably logged after
marker ``n``, so a replayed view is a closed book — the replica can
answer from local state alone.

Two wrinkles remain. Undecided intents below the read timestamp are
settled exactly like on the primary, except the outcome often already
sits in the replicated record stream (the local cache) and only
otherwise costs a cross-region push. And committed versions carry their
commit epoch, so a version from a *later* epoch that happens to have a
small timestamp stays invisible until its own view replays.
"""

from __future__ import annotations

import bisect

from .epochs import ceiling_epoch
from .messages import (
    CatchUp,
    LogShip,
    NotOwner,
    PushReq,
    ReplicaReadReq,
    ReplicaReadResp,
)
from .mvto import KeyStore, apply_log_entry
from .simnet import MS, RPC_TIMEOUT, Future, Node

DEFAULT_CATCHUP_INTERVAL_NS = 100 * MS


class ReplicaNode(Node):
    kind = "replica"

    def __init__(self, sim, net, node_id, region, drift_ppm, primary_id,
                 directory, interval_ns,
                 catchup_interval_ns=DEFAULT_CATCHUP_INTERVAL_NS):
        super().__init__(sim, net, node_id, region, drift_ppm)
        self.primary_id = primary_id
        self.data_stream = primary_id
        self.role_stream = f"rec/{primary_id}"
        self.interval_ns = interval_ns
        self.catchup_interval = catchup_interval_ns
        self.membership = directory
        self.store = KeyStore()
        self.applied: dict[str, int] = {}
        self._parked: dict[str, dict[int, list]] = {}
        self.replayed_epoch = 0
        self._view_waiters: dict[int, Future] = {}
        self._decided_fut: dict[str, Future] = {}
        self._push_inflight: dict[str, bool] = {}

    def start(self) -> None:
        self.k.spawn(self._catchup_loop())

    def handle(self, env) -> None:
        p = env.payload
        if isinstance(p, LogShip):
            self._on_ship(p)
        elif isinstance(p, ReplicaReadReq):
            self.k.spawn(self._read_task(env, p))

    # -- log application ---------------------------------------------------------

    def _on_ship(self, ship: LogShip) -> None:
        have = self.applied.get(ship.stream, 0)
        if ship.start > have:
            # Gap: park the segment for when the prefix lands, and ask
            # the primary to resend from our prefix in case it's lost.
            parked = self._parked.setdefault(ship.stream, {})
            old = parked.get(ship.start)
            if old is None or len(old) < len(ship.entries):
                parked[ship.start] = ship.entries
            if len(parked) > 64:  # a busy stream under heavy loss
                parked.pop(max(parked))
            self.k.send(self.primary_id, CatchUp(ship.stream, have))
            return
        self._ingest(ship.stream, ship.start, ship.entries)

    def _ingest(self, stream: str, start: int, entries: list) -> None:
        have = self.applied.get(stream, 0)
        for entry in entries[have - start:]:
            self._apply(stream, entry)
        parked = self._parked.get(stream)
        while parked:
            have = self.applied.get(stream, 0)
            start = min(parked)
            if start > have:
                break
            entries = parked.pop(start)
            for entry in entries[have - start:]:
                self._apply(stream, entry)

    def _apply(self, stream: str, entry) -> None:
        self.applied[stream] = self.applied.get(stream, 0) + 1
        epoch = apply_log_entry(self.store, entry)
        if epoch is not None and stream == self.data_stream \
                and epoch > self.replayed_epoch:
            self.replayed_epoch = epoch
            self.k.trace("replay", node=self.node_id, src=self.primary_id,
                         epoch=epoch)
            for v in sorted(self._view_waiters):
                if v <= epoch:
                    self._view_waiters.pop(v).resolve()
        txn = getattr(entry, "txn", None)
        if txn is not None and txn in self.store.decided:
            fut = self._decided_fut.pop(txn, None)
            if fut is not None and not fut.done:
                fut.resolve(self.store.decided[txn])

    def _catchup_loop(self):
        while True:
            yield self.k.sleep_local(self.catchup_interval)
            for stream in (self.data_stream, self.role_stream):
                self.k.send(self.primary_id,
                            CatchUp(stream, self.applied.get(stream, 0)))

    # -- reads ----------------------------------------------------------------------

    def _read_task(self, env, r: ReplicaReadReq):
        view = ceiling_epoch(r.ts.nanos, self.interval_ns)
        self.k.trace("rread_start", node=self.node_id, reader=r.reader,
                     ts=list(r.ts), view=view, mode=r.mode)
        while self.replayed_epoch < view:
            fut = self._view_waiters.get(view)
            if fut is None:
                fut = self._view_waiters[view] = Future(self.sim)
            yield fut
        pushed = []
        reads = []
        for key in r.keys:
            chain = self.store.touch(key)
            while True:
                blocker = None
                for txn, intent in chain.intents.items():
                    # An intent can only commit into epoch >= its proposal,
                    # so proposals beyond the view can't affect this read.
                    if intent.ts < r.ts and intent.proposal <= view:
                        blocker = (txn, intent.role)
                        break
                if blocker is None:
                    break
                txn, role = blocker
                if txn not in pushed:
                    pushed.append(txn)
                yield from self._settle(txn, role, r.reader)
            vts, value = self._visible(chain, r.ts, view)
            reads.append((key, vts, value))
        self.k.trace("rread", node=self.node_id, reader=r.reader,
                     ts=list(r.ts), view=view, mode=r.mode,
                     reads=[[k, list(v) if v else None, val]
                            for k, v, val in reads])
        self.k.reply(env, ReplicaReadResp(view, reads, pushed))

    @staticmethod
    def _visible(chain, ts, view):
        i = bisect.bisect_right(chain.order, ts) - 1
        while i >= 0:
            vts = chain.order[i]
            value, epoch = chain.versions[vts]
            if epoch <= view:
                return vts, value
            i -= 1
        return None, None

    # -- intent settlement -------------------------------------------------------------

    def _settle(self, txn: str, role: str, reader: str):
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
            resp = yield self.k.rpc(owner, PushReq(role, txn, self.node_id),
                                    timeout)
            if resp is RPC_TIMEOUT:
                self.membership.invalidate(role)
                continue
            if isinstance(resp, NotOwner):
                self.membership.invalidate(role)
                yield self.k.sleep_local(1 * MS)
                continue
            self.store.resolve(txn, resp.decision, resp.epoch)
            fut = self._decided_fut.pop(txn, None)
            if fut is not None and not fut.done:
                fut.resolve((resp.decision, resp.epoch))
        self._push_inflight.pop(txn, None)
