"""Builds a full simulated deployment from a Scenario and runs it.

Creation order is fixed (oracles, data nodes, standbys, replicas,
coordinators) so seeded drift assignment and node ids are reproducible.
Standby nodes are full data nodes that the key router simply never picks:
they cut epochs, host their own recorder role, and can adopt someone
else's — which is exactly what the takeover fault injects.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

from . import workload
from .clock import ClockConfig, OracleServer
from .coordinator import Coordinator
from .errors import InvalidConfig
from .mvto import DataNode
from .replica import ReplicaNode
from .replication import RoleDirectory, SharedStorage
from .scenario import Scenario, full_rtt_table
from .simnet import MS, LatencyMatrix, Network, Simulation
from .tsbatch import commit_wait_ns


class Router:
    """Static hash partitioning of the keyspace over the data nodes."""

    __slots__ = ("ids",)

    def __init__(self, data_node_ids):
        self.ids = list(data_node_ids)

    def primary(self, key: str) -> str:
        return self.ids[zlib.crc32(key.encode()) % len(self.ids)]

    @staticmethod
    def recorder_role(node_id: str) -> str:
        return f"rec/{node_id}"


@dataclass
class RunResult:
    scenario: Scenario
    txns: list
    replica_reads: list
    committed: int = 0
    aborted: int = 0
    failed: int = 0
    unknown: int = 0
    abort_reasons: dict = field(default_factory=dict)
    ts_requests: int = 0
    ts_fetches: int = 0
    ts_local: int = 0
    end_ns: int = 0
    trace: list = field(default_factory=list)
    cluster: object = None

    @property
    def finished(self) -> int:
        return self.committed + self.aborted + self.failed + self.unknown

    def history(self):
        from .history import build_history
        if getattr(self, "_history", None) is None:
            self._history = build_history(self.trace)
        return self._history

    def replicas_of(self):
        """primary node id -> replica node ids, or None without a cluster."""
        if self.cluster is None:
            return None
        return {nid: list(rids)
                for nid, rids in self.cluster.ship_map.items()
                if not nid.startswith("rec/")}

    def written_primaries(self, t) -> set:
        router = self.cluster.router
        return {router.primary(op[2]) for op in t.ops if op[1] == "w"}


class Cluster:
    def __init__(self, sc: Scenario):
        self.scenario = sc
        self.sim = Simulation(sc.seed)
        self.latency = LatencyMatrix(sc.regions,
                                     full_rtt_table(sc.regions, sc.rtt_overrides))
        self.net = Network(self.sim, self.latency, sc.faults,
                           oracle_one_way_ns=sc.oracle_rtt_ns // 2)
        self.storage = {r: SharedStorage(self.sim, flush_ns=sc.flush_ns)
                        for r in sc.regions}
        self.clock_cfg = ClockConfig(
            epsilon_ns=sc.epsilon_ns, max_drift_ppm=sc.max_drift_ppm,
            node_drift_ppm=dict(sc.node_drift_ppm),
            default_drift_ppm=sc.default_drift_ppm,
            oracle_rtt_ns=sc.oracle_rtt_ns,
        )
        self._drift_rng = self.sim.rng("drift") if sc.drift_spread else None

        self.oracles = []
        for i, region in enumerate(sc.regions):
            outages = [o for o in sc.faults.oracle_outages if o.server_id == i]
            self.oracles.append(OracleServer(
                self.sim, self.net, f"ts.{region}", region, server_id=i,
                cfg=self.clock_cfg, step_ns=sc.step_ns, ttl_ns=sc.ttl_ns,
                outages=outages,
            ))

        cwt = commit_wait_ns(sc.ttl_ns, sc.epsilon_ns, sc.max_drift_ppm,
                             strawman=(sc.ts_mode == "strawman"))
        self.uncertainty_wait_ns = cwt

        def proxy_args(region):
            return dict(oracle_ids=[f"ts.{region}"], ttl_ns=sc.ttl_ns,
                        step_ns=sc.step_ns, epsilon_ns=sc.epsilon_ns,
                        max_drift_ppm=sc.max_drift_ppm, mode=sc.ts_mode)

        data_ids = sc.data_node_ids()
        self.router = Router(data_ids)

        # Which replicas each stream ships to, shared by every writer of
        # that stream (the adopter of a role ships the role's stream too).
        self.ship_map: dict[str, list] = {}
        for nid in data_ids:
            for rr in sc.replicate_to:
                rid = f"{nid}@{rr}"
                self.ship_map.setdefault(nid, []).append(rid)
                self.ship_map.setdefault(f"rec/{nid}", []).append(rid)

        self.data_nodes = []
        for nid, region in zip(data_ids, sc.data_nodes):
            node = DataNode(
                self.sim, self.net, nid, region, self._drift(nid),
                storage=self.storage[region],
                directory=RoleDirectory(self.storage),
                tsproxy_args=proxy_args(region), ship_map=self.ship_map,
                interval_ns=sc.interval_ns,
                uncertainty_wait_ns=self.uncertainty_wait_ns,
                max_drift_ppm=sc.max_drift_ppm,
            )
            self.storage[region].set_initial_owner(node.role_self, nid)
            self.data_nodes.append(node)

        self.standby_nodes = []
        for nid, region in zip(sc.standby_ids(), sc.standbys):
            node = DataNode(
                self.sim, self.net, nid, region, self._drift(nid),
                storage=self.storage[region],
                directory=RoleDirectory(self.storage),
                tsproxy_args=proxy_args(region), ship_map=self.ship_map,
                interval_ns=sc.interval_ns,
                uncertainty_wait_ns=self.uncertainty_wait_ns,
                max_drift_ppm=sc.max_drift_ppm,
            )
            self.storage[region].set_initial_owner(node.role_self, nid)
            self.standby_nodes.append(node)

        self.replicas = []
        for nid in data_ids:
            for rr in sc.replicate_to:
                self.replicas.append(ReplicaNode(
                    self.sim, self.net, f"{nid}@{rr}", rr, self._drift(f"{nid}@{rr}"),
                    primary_id=nid, directory=RoleDirectory(self.storage),
                    interval_ns=sc.interval_ns,
                ))

        recorder_nodes = data_ids + sc.standby_ids()
        self.coordinators = []
        for nid, region in zip(sc.coordinator_ids(), sc.coordinators):
            self.coordinators.append(Coordinator(
                self.sim, self.net, nid, region, self._drift(nid),
                tsproxy_args=proxy_args(region), router=self.router,
                membership=RoleDirectory(self.storage),
                recorder_nodes=recorder_nodes,
            ))

        self.nodes = {}
        for n in (self.oracles + self.data_nodes + self.standby_nodes
                  + self.replicas + self.coordinators):
            self.nodes[n.node_id] = n

        self._check_fault_targets()
        self._started = False
        self._clients = None

    def _drift(self, node_id: str) -> int:
        if node_id in self.scenario.node_drift_ppm:
            return self.clock_cfg.drift_for(node_id)
        if self._drift_rng is not None:
            d = self.scenario.max_drift_ppm
            return self._drift_rng.randrange(-d, d + 1)
        return self.clock_cfg.default_drift_ppm

    def _check_fault_targets(self) -> None:
        recorder_capable = {n.node_id
                            for n in self.data_nodes + self.standby_nodes}
        crashable = recorder_capable | {n.node_id for n in self.coordinators}
        for c in self.scenario.faults.crashes:
            if c.node not in crashable:
                raise InvalidConfig(
                    f"crash target {c.node!r} is not a data/standby/"
                    f"coordinator node")
        for t in self.scenario.faults.takeovers:
            if t.to_node not in recorder_capable:
                raise InvalidConfig(
                    f"takeover target {t.to_node!r} is not a data/standby node")

    # -- orchestration ------------------------------------------------------------

    def start(self) -> None:
        if self._started:
            return
        self._started = True
        for n in self.data_nodes + self.standby_nodes:
            n.start()
        for n in self.replicas:
            n.start()
        for n in self.coordinators:
            n.start()
        sc = self.scenario
        for c in sc.faults.crashes:
            node = self.nodes[c.node]
            self.sim.at(c.at_ns, node.crash)
            if c.restart_at_ns is not None:
                self.sim.at(c.restart_at_ns, node.restart)
        for t in sc.faults.takeovers:
            self.sim.at(t.at_ns, self._takeover_fn(t))
        self._clients = workload.spawn_clients(self)

    def _takeover_fn(self, t):
        def fire():
            home = RoleDirectory.home_region(t.role)
            old = self.storage[home].membership.get(t.role)
            new = self.nodes[t.to_node]
            new.k.spawn(new.recorder.adopt_role(t.role, old))

        return fire

    def run(self) -> RunResult:
        sc = self.scenario
        self.start()
        clients = self._clients
        stop = clients.all_done if sc.stop_on_idle else None
        self.sim.run_until(sc.duration_ms * MS, stop=stop)
        self.sim.run_until(self.sim.now + sc.drain_ms * MS)
        return self._collect(clients)

    def _collect(self, clients) -> RunResult:
        res = RunResult(scenario=self.scenario, txns=list(clients.txns),
                        replica_reads=list(clients.replica_reads),
                        end_ns=self.sim.now,
                        trace=self.sim.trace.events, cluster=self)
        for t in clients.txns:
            if t.status == "committed":
                res.committed += 1
            elif t.status == "aborted":
                res.aborted += 1
            elif t.status == "unknown":
                res.unknown += 1
            else:
                res.failed += 1
        for c in self.coordinators:
            res.ts_requests += c.tsproxy.requests
            res.ts_fetches += c.tsproxy.fetches
            res.ts_local += c.tsproxy.served_local
            for reason, n in c.aborts_by_reason.items():
                res.abort_reasons[reason] = res.abort_reasons.get(reason, 0) + n
        return res


def run_scenario(sc: Scenario) -> RunResult:
    return Cluster(sc).run()
