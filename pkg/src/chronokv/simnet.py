"""Deterministic discrete-event core: virtual clock, seeded RNG streams,
cooperative generator tasks, and a multi-region message network with fault
injection.

A single event heap drives a whole run. Events are ordered by
``(virtual time, global sequence number)``, so two runs with the same seed
and scenario fire the same events in the same order and produce
byte-identical traces. Randomness is never drawn from a shared pool:
every consumer asks the simulation for a named stream
(``sim.rng("net")``, ``sim.rng("oracle/3")``, ...) seeded from the run
seed plus the name, which keeps one component's draws from perturbing
another's.

Capability split: protocol code acts through a :class:`NodeKernel`, which
exposes the node's *drifting* local clock, local timers, messaging and rpc
-- and nothing that reveals ground truth. ``Simulation.true_now()`` is held
by the simulator itself, the trace log, and the offline checkers only.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .errors import LivelockGuard

US = 1_000
MS = 1_000_000
SEC = 1_000_000_000

#: Sentinel resolved into an rpc future when no reply arrived in time.
RPC_TIMEOUT = object()


# ---------------------------------------------------------------------------
# clock drift arithmetic
#
# A node's drift is a signed ppm value d with |d| <= the configured maximum.
# Positive d is a slow clock: a local duration L takes L*(1+d) of true time.
# Negative d is a fast clock: L takes L/(1+|d|) of true time. Integer
# rounding is chosen so a fired timer always lands inside the envelope
# [L/(1+D), L*(1+D)] for |d| <= D.
# ---------------------------------------------------------------------------


def local_interval_to_true(local_ns: int, drift_ppm: int) -> int:
    """True-time duration consumed while this node's clock advances local_ns."""
    if drift_ppm >= 0:
        return local_ns * (1_000_000 + drift_ppm) // 1_000_000
    num = local_ns * 1_000_000
    den = 1_000_000 - drift_ppm  # drift_ppm < 0, so den > 1e6
    return -(-num // den)  # ceil, keeps fast clocks inside the envelope


def true_interval_to_local(true_ns: int, drift_ppm: int) -> int:
    """Local-clock reading accumulated over a true-time duration."""
    if drift_ppm >= 0:
        return true_ns * 1_000_000 // (1_000_000 + drift_ppm)
    return true_ns * (1_000_000 - drift_ppm) // 1_000_000


class _Event:
    __slots__ = ("fn",)

    def __init__(self, fn):
        self.fn = fn

    def cancel(self) -> None:
        self.fn = None


class Simulation:
    """Virtual time, the event heap, and named deterministic RNG streams."""

    def __init__(self, seed: int = 0, event_cap: int = 200_000_000):
        self.seed = seed
        self.now = 0
        self.event_cap = event_cap
        self.events_run = 0
        self._heap: list[tuple[int, int, _Event]] = []
        self._seq = 0
        self._rngs: dict[str, random.Random] = {}
        self.trace = TraceLog(self)

    # Ground truth. Protocol code must never call this; it reaches nodes
    # only through NodeKernel, which does not re-export it.
    def true_now(self) -> int:
        return self.now

    def rng(self, name: str) -> random.Random:
        r = self._rngs.get(name)
        if r is None:
            r = self._rngs[name] = random.Random(f"{self.seed}/{name}")
        return r

    def at(self, when: int, fn: Callable[[], None]) -> _Event:
        if when < self.now:
            when = self.now
        ev = _Event(fn)
        heapq.heappush(self._heap, (when, self._seq, ev))
        self._seq += 1
        return ev

    def after(self, delay: int, fn: Callable[[], None]) -> _Event:
        return self.at(self.now + delay, fn)

    def run_until(self, deadline: int, stop: Optional[Callable[[], bool]] = None) -> int:
        """Run events with time <= deadline; returns events executed.

        ``stop`` is polled after each event; when it turns true the loop
        exits early (used to end a run once every client finished).
        """
        ran = 0
        heap = self._heap
        while heap:
            when, _, ev = heap[0]
            if when > deadline:
                break
            heapq.heappop(heap)
            fn = ev.fn
            if fn is None:
                continue
            ev.fn = None
            self.now = when
            fn()
            ran += 1
            self.events_run += 1
            if self.events_run > self.event_cap:
                raise LivelockGuard(
                    f"event budget exceeded ({self.event_cap}) at t={self.now}ns"
                )
            if stop is not None and stop():
                return ran
        if self.now < deadline:
            self.now = deadline
        return ran


class Future:
    """One-shot value produced later in virtual time.

    Callbacks run as their own scheduled events (same instant, later
    sequence number), which keeps resolution order deterministic and
    avoids re-entrancy into whatever resolved the future.
    """

    __slots__ = ("sim", "done", "value", "_cbs")

    def __init__(self, sim: Simulation):
        self.sim = sim
        self.done = False
        self.value = None
        self._cbs: list | None = []

    def add_done(self, cb) -> None:
        if self.done:
            self.sim.after(0, lambda: cb(self.value))
        else:
            self._cbs.append(cb)

    def resolve(self, value=None) -> None:
        if self.done:
            return
        self.done = True
        self.value = value
        cbs, self._cbs = self._cbs, None
        for cb in cbs:
            self.sim.after(0, lambda cb=cb: cb(value))


def spawn(sim: Simulation, gen, guard: Optional[Callable[[], bool]] = None) -> Future:
    """Drive a generator task that yields Futures; returns a Future for its
    StopIteration value. ``guard`` is checked before every resume -- a node
    passes its incarnation check so tasks die silently across a crash."""
    result = Future(sim)

    def step(value=None):
        if guard is not None and not guard():
            return
        try:
            fut = gen.send(value)
        except StopIteration as stop:
            result.resolve(stop.value)
            return
        fut.add_done(step)

    sim.after(0, step)
    return result


class TraceLog:
    """Append-only run log. Entries are ``(true_ns, kind, fields)`` tuples;
    the log stamps ground-truth time so emitters never need to see it."""

    __slots__ = ("sim", "events")

    def __init__(self, sim: Simulation):
        self.sim = sim
        self.events: list[tuple[int, str, dict]] = []

    def emit(self, kind: str, **fields) -> None:
        self.events.append((self.sim.now, kind, fields))


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------


class LatencyMatrix:
    """Region-to-region round-trip times; one-way delay is rtt/2 plus jitter."""

    def __init__(self, regions: list[str], rtt_ms: dict[tuple[str, str], float]):
        self.regions = list(regions)
        self._oneway_ns: dict[tuple[str, str], int] = {}
        for a in regions:
            for b in regions:
                key = (a, b) if (a, b) in rtt_ms else (b, a)
                if key not in rtt_ms:
                    raise KeyError(f"no rtt configured for {a}<->{b}")
                self._oneway_ns[(a, b)] = int(rtt_ms[key] * MS / 2)

    def one_way_ns(self, src_region: str, dst_region: str) -> int:
        return self._oneway_ns[(src_region, dst_region)]


@dataclass(slots=True)
class PartitionWindow:
    regions: frozenset  # isolated group; messages crossing the cut are dropped
    start_ns: int
    end_ns: int

    def cuts(self, a: str, b: str, t: int) -> bool:
        if not (self.start_ns <= t < self.end_ns):
            return False
        return (a in self.regions) != (b in self.regions)


@dataclass(slots=True)
class CrashDirective:
    node: str
    at_ns: int
    restart_at_ns: Optional[int] = None


@dataclass(slots=True)
class OracleOutage:
    server_id: int
    start_ns: int
    end_ns: int


@dataclass(slots=True)
class TakeoverDirective:
    """Move a recorder role to another node at a virtual instant (the old
    owner is not told -- a 'fake crash' from the cluster's point of view)."""

    role: str
    to_node: str
    at_ns: int


@dataclass(slots=True)
class MsgFilter:
    """Drop a fraction of messages of specific payload kinds in a window."""

    kinds: frozenset
    prob: float
    start_ns: int = 0
    end_ns: int = 1 << 62


@dataclass
class FaultSchedule:
    drop_prob: float = 0.0
    reorder_prob: float = 0.0
    duplicate_prob: float = 0.0
    partitions: list[PartitionWindow] = field(default_factory=list)
    crashes: list[CrashDirective] = field(default_factory=list)
    oracle_outages: list[OracleOutage] = field(default_factory=list)
    takeovers: list[TakeoverDirective] = field(default_factory=list)
    msg_filters: list[MsgFilter] = field(default_factory=list)


class Envelope:
    __slots__ = ("src", "dst", "seq", "rid", "is_reply", "payload")

    def __init__(self, src, dst, seq, rid, is_reply, payload):
        self.src = src
        self.dst = dst
        self.seq = seq
        self.rid = rid
        self.is_reply = is_reply
        self.payload = payload


class Network:
    """Delivers envelopes between nodes with per-link latency, jitter, and
    the run's fault schedule (drops, reorders, duplicates, partitions)."""

    def __init__(
        self,
        sim: Simulation,
        latency: LatencyMatrix,
        faults: FaultSchedule,
        jitter_pct: float = 10.0,
        oracle_one_way_ns: int = 9 * US,
    ):
        self.sim = sim
        self.latency = latency
        self.faults = faults
        self.jitter = jitter_pct / 100.0
        self.oracle_one_way_ns = oracle_one_way_ns
        self.nodes: dict[str, Node] = {}
        self._rng = sim.rng("net")
        self.dropped = 0
        self.delivered = 0

    def register(self, node: "Node") -> None:
        if node.node_id in self.nodes:
            raise ValueError(f"duplicate node id {node.node_id}")
        self.nodes[node.node_id] = node

    def _partitioned(self, a: str, b: str, t: int) -> bool:
        for w in self.faults.partitions:
            if w.cuts(a, b, t):
                return True
        return False

    def _filtered(self, payload, t: int) -> bool:
        for f in self.faults.msg_filters:
            if f.start_ns <= t < f.end_ns and type(payload).__name__ in f.kinds:
                if self._rng.random() < f.prob:
                    return True
        return False

    def _base_delay(self, src: "Node", dst: "Node") -> int:
        # Time-oracle traffic stays inside the rack: it does not ride the
        # inter-node latency matrix.
        if src.kind == "oracle" or dst.kind == "oracle":
            base = self.oracle_one_way_ns
        else:
            base = self.latency.one_way_ns(src.region, dst.region)
        if self.jitter:
            base = int(base * (1.0 + self._rng.uniform(-self.jitter, self.jitter)))
        return max(base, 1)

    def send(self, src: "Node", dst_id: str, payload, rid: int = 0, is_reply: bool = False) -> None:
        if not src.alive:
            return
        dst = self.nodes[dst_id]
        now = self.sim.now
        if self._partitioned(src.region, dst.region, now):
            self.dropped += 1
            return
        if self.faults.drop_prob and self._rng.random() < self.faults.drop_prob:
            self.dropped += 1
            return
        if self._filtered(payload, now):
            self.dropped += 1
            return
        delay = self._base_delay(src, dst)
        if self.faults.reorder_prob and self._rng.random() < self.faults.reorder_prob:
            # Hold the message back long enough to overtake later traffic.
            delay = int(delay * self._rng.uniform(1.5, 3.0))
        env = Envelope(src.node_id, dst_id, src.next_seq(), rid, is_reply, payload)
        self.sim.after(delay, lambda: self._deliver(env))
        if self.faults.duplicate_prob and self._rng.random() < self.faults.duplicate_prob:
            dup_delay = int(delay * self._rng.uniform(1.0, 2.0))
            self.sim.after(dup_delay, lambda: self._deliver(env))

    def _deliver(self, env: Envelope) -> None:
        dst = self.nodes.get(env.dst)
        if dst is None or not dst.alive:
            self.dropped += 1
            return
        src = self.nodes.get(env.src)
        src_region = src.region if src is not None else dst.region
        if self._partitioned(src_region, dst.region, self.sim.now):
            self.dropped += 1
            return
        self.delivered += 1
        dst.on_envelope(env)


class Node:
    """A simulated process: id, region, liveness, and a kernel that is the
    only window protocol code has onto the simulation."""

    kind = "node"

    def __init__(self, sim: Simulation, net: Network, node_id: str, region: str,
                 drift_ppm: int = 0):
        self.sim = sim
        self.net = net
        self.node_id = node_id
        self.region = region
        self.alive = True
        self.incarnation = 0
        self._send_seq = 0
        self.k = NodeKernel(self, drift_ppm)
        net.register(self)

    def next_seq(self) -> int:
        self._send_seq += 1
        return self._send_seq

    def on_envelope(self, env: Envelope) -> None:
        if env.is_reply:
            self.k._complete_rpc(env.rid, env.payload)
        else:
            self.handle(env)

    def handle(self, env: Envelope) -> None:  # pragma: no cover - abstract
        raise NotImplementedError

    # -- liveness -----------------------------------------------------------

    def crash(self) -> None:
        if not self.alive:
            return
        self.alive = False
        self.incarnation += 1
        self.k._pending_rpc.clear()
        self.sim.trace.emit("crash", node=self.node_id)
        self.on_crash()

    def restart(self) -> None:
        # Subclasses rebuild volatile state (possibly asynchronously from
        # durable storage) and flip `alive` back on when ready to serve.
        self.incarnation += 1
        self.sim.trace.emit("restart", node=self.node_id)
        self.on_restart()

    def on_crash(self) -> None:
        pass

    def on_restart(self) -> None:
        self.alive = True


class NodeKernel:
    """Per-node capability handle: drifting local clock, local timers,
    messaging, rpc with timeouts, task spawning and tracing. No ground truth."""

    __slots__ = ("_node", "drift_ppm", "_offset", "_pending_rpc", "_next_rid")

    def __init__(self, node: Node, drift_ppm: int):
        self._node = node
        self.drift_ppm = drift_ppm
        # Arbitrary epoch offset so absolute local readings are meaningless
        # across nodes; only intervals carry information.
        self._offset = node.sim.rng("clock-offsets").randrange(0, SEC)
        self._pending_rpc: dict[int, Future] = {}
        self._next_rid = 1

    # -- clock ---------------------------------------------------------------

    def local_now(self) -> int:
        return self._offset + true_interval_to_local(self._node.sim.now, self.drift_ppm)

    def set_local_timer(self, local_duration_ns: int, fn) -> _Event:
        """Fire ``fn`` once the node's own clock has advanced the duration."""
        true_delay = max(1, local_interval_to_true(local_duration_ns, self.drift_ppm))
        inc = self._node.incarnation

        def fire():
            if self._node.alive and self._node.incarnation == inc:
                fn()

        return self._node.sim.after(true_delay, fire)

    def sleep_local(self, local_duration_ns: int) -> Future:
        fut = Future(self._node.sim)
        self.set_local_timer(local_duration_ns, fut.resolve)
        return fut

    # -- messaging -----------------------------------------------------------

    def send(self, dst_id: str, payload) -> None:
        self._node.net.send(self._node, dst_id, payload)

    def reply(self, env: Envelope, payload) -> None:
        self._node.net.send(self._node, env.src, payload, rid=env.rid, is_reply=True)

    def rpc(self, dst_id: str, payload, timeout_local_ns: int) -> Future:
        """Send a request and resolve with the reply payload, or with
        RPC_TIMEOUT if nothing came back within the local-clock timeout."""
        rid = self._next_rid
        self._next_rid += 1
        fut = Future(self._node.sim)
        self._pending_rpc[rid] = fut
        self._node.net.send(self._node, dst_id, payload, rid=rid, is_reply=False)

        def on_timeout():
            pending = self._pending_rpc.pop(rid, None)
            if pending is not None:
                pending.resolve(RPC_TIMEOUT)

        self.set_local_timer(timeout_local_ns, on_timeout)
        return fut

    def _complete_rpc(self, rid: int, payload) -> None:
        fut = self._pending_rpc.pop(rid, None)
        if fut is not None:
            fut.resolve(payload)

    # -- tasks / trace ---------------------------------------------------------

    def spawn(self, gen) -> Future:
        node = self._node
        inc = node.incarnation
        return spawn(node.sim, gen, guard=lambda: node.alive and node.incarnation == inc)

    def trace(self, kind: str, **fields) -> None:
        self._node.sim.trace.emit(kind, **fields)

    def rpc_timeout_for(self, dst_id: str, floor_ns: int = 5 * MS) -> int:
        """A generous per-attempt timeout for a destination, derived from the
        configured link rtt (local-clock nanoseconds)."""
        node = self._node
        dst = node.net.nodes[dst_id]
        if dst.kind == "oracle" or node.kind == "oracle":
            base = node.net.oracle_one_way_ns * 2
        else:
            base = node.net.latency.one_way_ns(node.region, dst.region) * 2
        return max(int(base * 2.5), floor_ns)


def rpc_retry(kernel: NodeKernel, dst_fn, payload, attempts: int = 25,
              backoff_ns: int = 2 * MS):
    """Generator helper: call ``dst_fn()`` for a target, rpc it, retry on
    timeout with a linear backoff. Yields futures; returns the first real
    reply payload, or RPC_TIMEOUT once attempts are exhausted.

    ``dst_fn`` is re-evaluated per attempt so callers can re-route (e.g.
    after a membership change).
    """
    for i in range(attempts):
        dst = dst_fn()
        if dst is None:
            yield kernel.sleep_local(backoff_ns * (i + 1))
            continue
        resp = yield kernel.rpc(dst, payload, kernel.rpc_timeout_for(dst))
        if resp is not RPC_TIMEOUT:
            return resp
        if backoff_ns:
            yield kernel.sleep_local(backoff_ns * (i + 1))
    return RPC_TIMEOUT
