"""Structured view over a run's trace, and JSONL persistence.

The trace is the simulator's ground-truth event log. Everything the
checkers reason about — transaction intervals, operation streams, replica
read results, cut and replay instants — is derived here in one pass so
each checker can stay a pure function over plain data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .tsbatch import Timestamp

SCHEMA_VERSION = 1


def _ts(v) -> Optional[Timestamp]:
    return None if v is None else Timestamp(v[0], v[1])


@dataclass
class TxnInfo:
    txn: str
    begin_ns: int
    end_ns: Optional[int] = None
    status: Optional[str] = None   # None: still running when the run ended
    ts: Optional[Timestamp] = None
    epoch: Optional[int] = None
    reason: Optional[str] = None
    ops: list = field(default_factory=list)  # (i, kind, key, vts, val)

    @property
    def committed(self) -> bool:
        return self.status == "committed"


@dataclass
class ReplicaRead:
    reader: str
    node: str
    ts: Timestamp
    view: int
    mode: str
    start_ns: int
    end_ns: int
    reads: list  # (key, vts, val)


@dataclass
class History:
    txns: dict = field(default_factory=dict)        # txn -> TxnInfo
    rreads: list = field(default_factory=list)      # ReplicaRead
    cuts: list = field(default_factory=list)        # (t, node, epoch, promised)
    replays: list = field(default_factory=list)     # (t, replica, primary, epoch)
    records: list = field(default_factory=list)     # (t, role, txn, status, epoch)
    pushes: list = field(default_factory=list)      # (t, kind, node, reader, txn)
    oracle: list = field(default_factory=list)      # (t, srv, lo, hi)
    crashes: list = field(default_factory=list)     # (t, node)
    restarts: list = field(default_factory=list)    # (t, node)
    recoveries: list = field(default_factory=list)  # (t, node, cuts, rt_floor)
    takeovers: list = field(default_factory=list)   # (t, role, node)
    fenced: list = field(default_factory=list)      # (t, node, role)

    def committed_txns(self) -> list:
        return [t for t in self.txns.values() if t.committed]


def build_history(events) -> History:
    h = History()
    rr_pending: dict = {}
    for t, kind, f in events:
        if kind == "txn_begin":
            h.txns[f["txn"]] = TxnInfo(f["txn"], begin_ns=t)
        elif kind == "op":
            info = h.txns.get(f["txn"])
            if info is not None:
                info.ops.append((f["i"], f["op"], f["key"],
                                 _ts(f.get("vts")), f.get("val")))
        elif kind == "txn_end":
            info = h.txns.get(f["txn"])
            if info is None:
                info = h.txns[f["txn"]] = TxnInfo(f["txn"], begin_ns=t)
            info.end_ns = t
            info.status = f["status"]
            info.ts = _ts(f.get("ts"))
            info.epoch = f.get("epoch")
            info.reason = f.get("reason")
        elif kind == "rread_start":
            rr_pending[(f["node"], f["reader"])] = t
        elif kind == "rread":
            key = (f["node"], f["reader"])
            start = rr_pending.pop(key, t)
            h.rreads.append(ReplicaRead(
                reader=f["reader"], node=f["node"], ts=_ts(f["ts"]),
                view=f["view"], mode=f["mode"], start_ns=start, end_ns=t,
                reads=[(r[0], _ts(r[1]), r[2]) for r in f["reads"]],
            ))
        elif kind == "cut":
            h.cuts.append((t, f["node"], f["epoch"], f["promised"]))
        elif kind == "replay":
            h.replays.append((t, f["node"], f["src"], f["epoch"]))
        elif kind == "record":
            h.records.append((t, f["role"], f["txn"], f["status"], f.get("epoch")))
        elif kind in ("push_wait", "push_done"):
            h.pushes.append((t, kind, f["node"], f["reader"], f["txn"]))
        elif kind == "oracle":
            h.oracle.append((t, f["srv"], f["lo"], f["hi"]))
        elif kind == "crash":
            h.crashes.append((t, f["node"]))
        elif kind == "restart":
            h.restarts.append((t, f["node"]))
        elif kind == "recovered":
            h.recoveries.append((t, f["node"], f["cuts"], f["rt_floor"]))
        elif kind == "takeover":
            h.takeovers.append((t, f["role"], f["node"]))
        elif kind == "fenced":
            h.fenced.append((t, f["node"], f["role"]))
    return h


def write_trace(path: str, events, meta: dict = None) -> None:
    header = {"kind": "header", "schema": SCHEMA_VERSION}
    header.update(meta or {})
    with open(path, "w") as out:
        out.write(json.dumps(header) + "\n")
        for t, kind, fields in events:
            out.write(json.dumps([t, kind, fields], separators=(",", ":")) + "\n")


def read_trace(path: str):
    """Returns (meta, events); meta is the header minus kind/schema."""
    events = []
    with open(path) as src:
        header = json.loads(src.readline())
        if header.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported trace schema {header.get('schema')!r}")
        meta = {k: v for k, v in header.items() if k not in ("kind", "schema")}
        for line in src:
            if not line.strip():
                continue
            t, kind, fields = json.loads(line)
            events.append((t, kind, fields))
    return meta, events
