"""Durable logs and the shared storage layer beneath them.

Each data node owns an append-only stream of log entries (write intents,
finalizations, epoch cut markers) and each recorder role owns a stream of
transaction-record updates. Streams live in a per-region SharedStorage
that survives every crash. Appends become durable after a configurable
flush latency and are applied atomically in event order, which makes the
membership registers linearizable and lets fencing be checked at the
moment an append lands: a recorder that lost its role gets Fenced instead
of a commit point.

Log positions double as replication sequence numbers: primaries ship
durable entries to replicas, which apply them strictly in order and
repair gaps go-back-N style by asking for everything from the first
missing position.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from .simnet import MS, Future, Simulation

FENCED = "fenced"


# -- log entries -------------------------------------------------------------


@dataclass(slots=True, frozen=True)
class IntentEntry:
    txn: str
    key: str
    ts: tuple
    value: str
    role: str  # recorder role that will decide this transaction
    proposal: int  # epoch in force when the intent was logged


@dataclass(slots=True, frozen=True)
class FinalizeEntry:
    txn: str
    decision: str
    epoch: Optional[int]


@dataclass(slots=True, frozen=True)
class CutEntry:
    epoch: int


@dataclass(slots=True, frozen=True)
class RecordEntry:
    txn: str
    status: str
    epoch: Optional[int]
    coordinator: str


class SharedStorage:
    """Region-local durable layer: fenced append streams plus a linearizable
    membership register per recorder role."""

    def __init__(self, sim: Simulation, flush_ns: int = MS // 2,
                 read_ns: Optional[int] = None):
        self.sim = sim
        self.flush_ns = max(1, flush_ns)
        self.read_ns = read_ns if read_ns is not None else max(1, flush_ns // 2)
        self.streams: dict[str, list] = {}
        self.membership: dict[str, str] = {}

    # Initial ownership is cluster wiring, not a runtime event.
    def set_initial_owner(self, role: str, node_id: str) -> None:
        self.membership[role] = node_id

    def append(self, stream: str, entries: list, writer: str,
               role: Optional[str] = None) -> Future:
        """Durably append after the flush latency. Resolves with
        ``("ok", start_pos)`` or ``("fenced",)`` if ``role`` is given and the
        writer no longer owns it at flush time."""
        fut = Future(self.sim)

        def flush():
            if role is not None and self.membership.get(role) != writer:
                fut.resolve((FENCED,))
                return
            log = self.streams.setdefault(stream, [])
            start = len(log)
            log.extend(entries)
            fut.resolve(("ok", start))

        self.sim.after(self.flush_ns, flush)
        return fut

    def read_stream(self, stream: str, start: int = 0) -> Future:
        fut = Future(self.sim)

        def serve():
            fut.resolve(list(self.streams.get(stream, ())[start:]))

        self.sim.after(self.read_ns, serve)
        return fut

    def cas_membership(self, role: str, expected: str, new: str) -> Future:
        """Compare-and-swap the role owner; resolves with True iff it won."""
        fut = Future(self.sim)

        def apply():
            if self.membership.get(role) == expected:
                self.membership[role] = new
                fut.resolve(True)
            else:
                fut.resolve(False)

        self.sim.after(self.read_ns, apply)
        return fut

    def get_owner(self, role: str) -> Future:
        fut = Future(self.sim)
        self.sim.after(self.read_ns, lambda: fut.resolve(self.membership.get(role)))
        return fut

    def list_roles_owned(self, node_id: str) -> Future:
        """Roles the register currently assigns to ``node_id`` (used by a
        restarting node to find which record streams to reload)."""
        fut = Future(self.sim)

        def serve():
            fut.resolve([r for r, o in self.membership.items() if o == node_id])

        self.sim.after(self.read_ns, serve)
        return fut


class MembershipCache:
    """Node-side view of role ownership: serve from cache, refresh from
    storage on a miss or after an explicit invalidation."""

    def __init__(self, storage: SharedStorage):
        self.storage = storage
        self._cache: dict[str, str] = {}

    def invalidate(self, role: str) -> None:
        self._cache.pop(role, None)

    def peek(self, role: str) -> Optional[str]:
        return self._cache.get(role)

    def lookup(self, role: str):
        """Generator -> current owner (may yield one storage read)."""
        owner = self._cache.get(role)
        if owner is not None:
            return owner
        owner = yield self.storage.get_owner(role)
        if owner is not None:
            self._cache[role] = owner
        return owner


class RoleDirectory:
    """Role lookups routed to the storage holding the role's record stream.

    A role's name ends with its home region (``rec/d0.SH`` lives in SH) and
    that never changes — takeover moves the owner, not the stream. Pushes
    and decides from any region resolve owners through this directory.
    """

    def __init__(self, storages: dict[str, SharedStorage]):
        self._caches = {r: MembershipCache(s) for r, s in storages.items()}

    @staticmethod
    def home_region(role: str) -> str:
        return role.rsplit(".", 1)[1]

    def invalidate(self, role: str) -> None:
        self._caches[self.home_region(role)].invalidate(role)

    def peek(self, role: str) -> Optional[str]:
        return self._caches[self.home_region(role)].peek(role)

    def lookup(self, role: str):
        return (yield from self._caches[self.home_region(role)].lookup(role))
