"""Wire payloads. Every message rides a simnet envelope that adds sender,
receiver, and a per-sender sequence number; payloads carry protocol fields
only. Timestamps travel as (nanos, server_id) tuples."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

COMMIT = "commit"
ABORT = "abort"

IN_PROGRESS = "in_progress"
COMMITTED = "committed"
ABORTED = "aborted"


# -- time oracle -------------------------------------------------------------


@dataclass(slots=True)
class TsReq:
    # grid=True: the reading seeds a timestamp batch, so its upper bound
    # must stay off the step grid of other recent batch bases.
    grid: bool = True


@dataclass(slots=True)
class TsResp:
    earliest: int
    latest: int
    server_id: int


@dataclass(slots=True)
class TsErr:
    pass


# -- data plane ---------------------------------------------------------------


@dataclass(slots=True)
class ReadReq:
    key: str
    ts: tuple
    reader: str  # txn id or replica-reader tag, for push bookkeeping


@dataclass(slots=True)
class ReadResp:
    value: Optional[str]
    version_ts: Optional[tuple]
    pushed: list = field(default_factory=list)


@dataclass(slots=True)
class WriteReq:
    key: str
    txn: str
    ts: tuple
    value: str
    role: str  # recorder role handling this transaction
    first: bool  # first write of the transaction creates its record
    coordinator: str


@dataclass(slots=True)
class WriteResp:
    ok: bool
    proposal: Optional[int] = None  # epoch proposed for this write


@dataclass(slots=True)
class FinalizeReq:
    txn: str
    decision: str  # COMMIT | ABORT
    epoch: Optional[int]


@dataclass(slots=True)
class FinalizeResp:
    ok: bool  # False signals the node had no trace of the transaction


# -- recorder ------------------------------------------------------------------


@dataclass(slots=True)
class RecordCreate:
    """Create an in-progress record at the current owner of a role (used when
    the first-write node no longer owns its own recorder role)."""

    role: str
    txn: str
    coordinator: str


@dataclass(slots=True)
class RecordCreated:
    ok: bool


@dataclass(slots=True)
class DecideReq:
    role: str
    txn: str
    decision: str
    proposals: list  # epochs proposed by write acks
    coordinator: str


@dataclass(slots=True)
class DecideResp:
    status: str  # COMMITTED | ABORTED
    epoch: Optional[int]


@dataclass(slots=True)
class NotOwner:
    role: str


@dataclass(slots=True)
class PushReq:
    role: str
    txn: str
    reader: str


@dataclass(slots=True)
class PushResp:
    txn: str
    decision: str
    epoch: Optional[int]


@dataclass(slots=True)
class Heartbeat:
    coordinator: str


# -- replication ----------------------------------------------------------------


@dataclass(slots=True)
class LogShip:
    stream: str
    start: int  # sequence number of entries[0] in the stream
    entries: list


@dataclass(slots=True)
class CatchUp:
    stream: str
    have: int  # replica has entries [0, have)


# -- replica reads ----------------------------------------------------------------


@dataclass(slots=True)
class ReplicaReadReq:
    keys: list
    ts: tuple
    reader: str
    mode: str = "fresh"  # fresh (linearizable) | stale (client snapshot)


@dataclass(slots=True)
class ReplicaReadResp:
    view: int
    reads: list  # [(key, value, version_ts)]
    pushed: list = field(default_factory=list)
