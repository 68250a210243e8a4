"""Run configuration: topology, clocks, workload, faults.

A Scenario is a plain dataclass so tests can build them inline; the YAML
loader exists for the CLI. Node ids are derived, in order, from the
region lists — data nodes ``d0.SH, d1.BJ, ...``, standbys ``s0.SH, ...``,
coordinators ``c0.SH, ...``, oracles ``ts.SH``, replicas ``d0.SH@SG`` —
and fault entries refer to nodes by those ids.

All durations in field names carry their unit. The region set and
round-trip table default to a five-site wide-area layout where the
farthest pair sits ~78ms apart and intra-region hops cost 0.2ms; the
timestamp oracle is reached over a dedicated low-latency path instead
of the general mesh, so a batch fetch costs microseconds, not the
intra-region RTT (which would dwarf the batch lifetime).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import yaml

from .errors import InvalidConfig
from .simnet import (
    MS,
    CrashDirective,
    FaultSchedule,
    MsgFilter,
    OracleOutage,
    PartitionWindow,
    TakeoverDirective,
)
from .tsbatch import validate_batch_params

DEFAULT_REGIONS = ["SH", "BJ", "GZ", "GY", "SG"]

# Round-trip milliseconds between sites; same-site pairs default to 0.2.
DEFAULT_RTT_MS = {
    ("SH", "BJ"): 27.3,
    ("SH", "GZ"): 31.3,
    ("SH", "GY"): 29.2,
    ("SH", "SG"): 69.3,
    ("BJ", "GZ"): 42.6,
    ("BJ", "GY"): 38.5,
    ("BJ", "SG"): 77.6,
    ("GZ", "GY"): 28.0,
    ("GZ", "SG"): 46.8,
    ("GY", "SG"): 60.0,
}

INTRA_REGION_RTT_MS = 0.2


def full_rtt_table(regions, overrides=None):
    table = {}
    for i, a in enumerate(regions):
        table[(a, a)] = INTRA_REGION_RTT_MS
        for b in regions[i + 1:]:
            key = (a, b) if (a, b) in DEFAULT_RTT_MS else (b, a)
            if key in DEFAULT_RTT_MS:
                table[(a, b)] = DEFAULT_RTT_MS[key]
    if overrides:
        for k, v in overrides.items():
            if isinstance(k, str):
                a, b = k.split("-")
                table[(a, b)] = float(v)
            else:
                table[tuple(k)] = float(v)
    return table


@dataclass
class WorkloadSpec:
    kind: str = "ycsb"            # ycsb | rmw | blind | slow_commit | mix
    keys: int = 1000
    ops_per_txn: int = 3
    write_ratio: float = 0.5
    zipf_theta: float = 0.8
    hold_intervals: float = 3.0   # slow_commit: hold open this many epochs
    slow_fraction: float = 0.05   # mix: fraction of slow_commit txns

    def validate(self) -> None:
        if self.kind not in ("ycsb", "rmw", "blind", "slow_commit", "mix"):
            raise InvalidConfig(f"unknown workload kind {self.kind!r}")
        if self.keys < 1 or self.ops_per_txn < 1:
            raise InvalidConfig("workload needs at least one key and one op")
        if not 0.0 <= self.write_ratio <= 1.0:
            raise InvalidConfig("write_ratio outside [0, 1]")
        if self.zipf_theta < 0.0:
            raise InvalidConfig("zipf_theta must be >= 0")


@dataclass
class Scenario:
    name: str = "default"
    seed: int = 1
    duration_ms: int = 10_000      # hard cap on virtual time
    drain_ms: int = 1_000          # extra time for finalize/replication tails

    regions: list = field(default_factory=lambda: list(DEFAULT_REGIONS))
    rtt_overrides: dict = field(default_factory=dict)

    # clocks and timestamps
    epsilon_ns: int = 100_000
    max_drift_ppm: int = 200
    node_drift_ppm: dict = field(default_factory=dict)
    default_drift_ppm: int = 0
    drift_spread: bool = False     # give every node a seeded drift in [-D, D]
    oracle_rtt_ns: int = 18_000
    ts_mode: str = "batched"       # batched | strawman
    ttl_ns: int = 100_000
    step_ns: int = 10
    interval_ms: int = 100         # epoch length

    # topology: one entry per node, naming its region
    data_nodes: list = field(default_factory=lambda: list(DEFAULT_REGIONS))
    standbys: list = field(default_factory=list)
    replicate_to: list = field(default_factory=list)
    coordinators: list = field(default_factory=lambda: list(DEFAULT_REGIONS))

    # workload
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    clients_per_coordinator: int = 2
    txns_per_client: int = 50
    think_ns: int = 0
    replica_readers: int = 0
    replica_reads_per_reader: int = 20
    replica_read_mode: str = "fresh"   # fresh | stale | mixed
    stale_lag_ms: int = 300

    # storage
    flush_ns: int = 500_000

    # stop as soon as every client finished (False: run the full duration,
    # e.g. to accumulate epoch cuts past the end of the workload)
    stop_on_idle: bool = True

    faults: FaultSchedule = field(default_factory=FaultSchedule)

    def __post_init__(self):
        validate_batch_params(self.ttl_ns, self.step_ns)
        if self.ts_mode not in ("batched", "strawman"):
            raise InvalidConfig(f"unknown ts_mode {self.ts_mode!r}")
        if self.replica_read_mode not in ("fresh", "stale", "mixed"):
            raise InvalidConfig(
                f"unknown replica_read_mode {self.replica_read_mode!r}")
        known = set(self.regions)
        for r in (list(self.data_nodes) + list(self.standbys)
                  + list(self.replicate_to) + list(self.coordinators)):
            if r not in known:
                raise InvalidConfig(f"region {r!r} not in {self.regions}")
        if not self.data_nodes:
            raise InvalidConfig("need at least one data node")
        if not self.coordinators:
            raise InvalidConfig("need at least one coordinator")
        if self.interval_ms <= 0:
            raise InvalidConfig("interval_ms must be positive")
        if isinstance(self.workload, dict):
            self.workload = WorkloadSpec(**self.workload)
        self.workload.validate()

    @property
    def interval_ns(self) -> int:
        return self.interval_ms * MS

    # derived node ids, in creation order
    def data_node_ids(self):
        return [f"d{i}.{r}" for i, r in enumerate(self.data_nodes)]

    def standby_ids(self):
        return [f"s{i}.{r}" for i, r in enumerate(self.standbys)]

    def coordinator_ids(self):
        return [f"c{i}.{r}" for i, r in enumerate(self.coordinators)]


def _ms(v) -> int:
    return int(float(v) * MS)


def scenario_from_dict(d: dict) -> Scenario:
    d = dict(d)
    fault_d = d.pop("faults", None) or {}
    wl = d.pop("workload", None)
    sc = Scenario(**d)
    if wl:
        sc.workload = WorkloadSpec(**wl)
        sc.workload.validate()
    sc.faults = _faults_from_dict(fault_d, sc)
    return sc


def _faults_from_dict(fd: dict, sc: Scenario) -> FaultSchedule:
    fs = FaultSchedule(
        drop_prob=float(fd.get("drop_prob", 0.0)),
        reorder_prob=float(fd.get("reorder_prob", 0.0)),
        duplicate_prob=float(fd.get("duplicate_prob", 0.0)),
    )
    for c in fd.get("crashes", ()):
        restart = c.get("restart_at_ms")
        fs.crashes.append(CrashDirective(
            node=c["node"], at_ns=_ms(c["at_ms"]),
            restart_at_ns=_ms(restart) if restart is not None else None,
        ))
    for p in fd.get("partitions", ()):
        fs.partitions.append(PartitionWindow(
            regions=frozenset(p["regions"]),
            start_ns=_ms(p["from_ms"]), end_ns=_ms(p["to_ms"]),
        ))
    for o in fd.get("oracle_outages", ()):
        region = o["region"]
        if region not in sc.regions:
            raise InvalidConfig(f"oracle outage names unknown region {region!r}")
        fs.oracle_outages.append(OracleOutage(
            server_id=sc.regions.index(region),
            start_ns=_ms(o["from_ms"]), end_ns=_ms(o["to_ms"]),
        ))
    for t in fd.get("takeovers", ()):
        fs.takeovers.append(TakeoverDirective(
            role=t["role"], to_node=t["to"], at_ns=_ms(t["at_ms"]),
        ))
    for m in fd.get("msg_filters", ()):
        fs.msg_filters.append(MsgFilter(
            kinds=frozenset(m["kinds"]), prob=float(m["prob"]),
            start_ns=_ms(m.get("from_ms", 0)),
            end_ns=_ms(m["to_ms"]) if "to_ms" in m else 1 << 62,
        ))
    return fs


def load_scenario(path: str) -> Scenario:
    with open(path) as f:
        raw = yaml.safe_load(f) or {}
    if not isinstance(raw, dict):
        raise InvalidConfig(f"{path}: expected a mapping at top level")
    return scenario_from_dict(raw)
