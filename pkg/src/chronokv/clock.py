"""Clock machinery: uncertainty-bounded time oracles and per-node drift.

Ground truth lives on the simulation. Every node sees only its own local
clock, which drifts within a configured bound; oracle servers answer time
requests with an interval guaranteed to contain the true instant, with
half-width epsilon. Where the true instant falls inside that interval is
adversarial: drawn uniformly per call from a seeded stream, so sweeps
exercise the worst placements.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from .errors import InvalidConfig
from .messages import TsErr, TsReq, TsResp
from .simnet import MS, US, Network, Node, Simulation

DEFAULT_EPSILON_NS = 100 * US
DEFAULT_MAX_DRIFT_PPM = 200
DEFAULT_ORACLE_RTT_NS = 18 * US  # in-rack fetch, well under the batch TTL


class UncertainTime(NamedTuple):
    """An oracle reading: true time is somewhere in [earliest, latest]."""

    earliest: int
    latest: int
    server_id: int


@dataclass
class ClockConfig:
    epsilon_ns: int = DEFAULT_EPSILON_NS
    max_drift_ppm: int = DEFAULT_MAX_DRIFT_PPM
    # Per-node drift in signed ppm; nodes not listed use default_drift_ppm.
    node_drift_ppm: dict[str, int] = field(default_factory=dict)
    default_drift_ppm: int = 0
    oracle_rtt_ns: int = DEFAULT_ORACLE_RTT_NS

    def drift_for(self, node_id: str) -> int:
        d = self.node_drift_ppm.get(node_id, self.default_drift_ppm)
        if abs(d) > self.max_drift_ppm:
            raise InvalidConfig(
                f"node {node_id} drift {d}ppm exceeds bound {self.max_drift_ppm}ppm"
            )
        return d


class TTCOracle:
    """The sampling core of one oracle server, separated from the wire so it
    can be driven directly in tests.

    Guarantees, per server:
      * containment: earliest <= true <= latest, with latest-earliest == 2*eps;
      * strictly increasing ``latest`` across calls;
      * no two ``latest`` values within a recent window are congruent modulo
        ``step_ns``. Batches derive every issued timestamp from ``latest`` on
        a fixed step grid, so same-server grid collisions -- two batches whose
        windows overlap and align -- would mint duplicate timestamps.
        Monotonicity alone does not rule that out; spacing the bounds off each
        other's grid residue does.
    """

    def __init__(self, server_id: int, epsilon_ns: int, rng, step_ns: int = 10,
                 ttl_ns: int = 100 * US):
        self.server_id = server_id
        self.epsilon_ns = epsilon_ns
        self.rng = rng
        self.step_ns = max(1, step_ns)
        self.ttl_ns = ttl_ns
        self._last_latest = -1
        self._recent: list[int] = []  # recent latest values, for grid spacing

    def sample(self, true_now: int, grid: bool = True) -> UncertainTime:
        eps = self.epsilon_ns
        if eps == 0:
            return UncertainTime(true_now, true_now, self.server_id)
        skew = self.rng.randrange(0, 2 * eps + 1)
        latest = true_now + (2 * eps - skew)
        if latest <= self._last_latest:
            latest = self._last_latest + 1
        if grid:
            # Two batch bases can mint the same timestamp only when their
            # issue windows overlap (bases less than TTL apart) and they
            # agree modulo the grid step; nudge off occupied residues.
            horizon = latest - self.ttl_ns
            self._recent = [v for v in self._recent if v > horizon]
            bumps = 0
            while any((latest - v) % self.step_ns == 0 for v in self._recent):
                latest += 1
                bumps += 1
                if bumps >= self.step_ns:
                    raise RuntimeError(
                        "all grid residues occupied: more than step_ns "
                        "batch fetches within one TTL window"
                    )
            self._recent.append(latest)
        earliest = latest - 2 * eps
        if earliest > true_now:
            raise RuntimeError(
                "oracle cannot satisfy monotonic unique bounds at this rate"
            )
        self._last_latest = latest
        return UncertainTime(earliest, latest, self.server_id)


class OracleServer(Node):
    """Wire wrapper for one TTCOracle; unavailable inside outage windows."""

    kind = "oracle"

    def __init__(self, sim: Simulation, net: Network, node_id: str, region: str,
                 server_id: int, cfg: ClockConfig, step_ns: int, ttl_ns: int,
                 outages: Optional[list] = None):
        super().__init__(sim, net, node_id, region, drift_ppm=0)
        self.server_id = server_id
        self.core = TTCOracle(
            server_id, cfg.epsilon_ns, sim.rng(f"oracle/{server_id}"),
            step_ns=step_ns, ttl_ns=ttl_ns,
        )
        self.outages = outages or []

    def _out(self) -> bool:
        t = self.sim.now
        for o in self.outages:
            if o.server_id == self.server_id and o.start_ns <= t < o.end_ns:
                return True
        return False

    def handle(self, env) -> None:
        if not isinstance(env.payload, TsReq):
            return
        if self._out():
            self.k.reply(env, TsErr())
            return
        # The oracle *is* the clock hardware: it reads ground truth.
        reading = self.core.sample(self.sim.true_now(), grid=env.payload.grid)
        self.sim.trace.emit(
            "oracle", srv=self.server_id, lo=reading.earliest, hi=reading.latest
        )
        self.k.reply(env, TsResp(reading.earliest, reading.latest, self.server_id))


def oracle_now(core: TTCOracle, true_now: int) -> UncertainTime:
    """Direct (non-networked) oracle read; convenience for tests."""
    return core.sample(true_now)
