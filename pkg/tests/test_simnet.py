"""Simulation substrate: virtual time, drifting clocks, message faults."""

import pytest

from conftest import Host, drive, one_region
from chronokv.simnet import (
    MS,
    RPC_TIMEOUT,
    FaultSchedule,
    Future,
    LatencyMatrix,
    Network,
    PartitionWindow,
    Simulation,
    local_interval_to_true,
    true_interval_to_local,
)


# -- drift arithmetic ---------------------------------------------------------


def test_slow_clock_stretches_true_time():
    # +200ppm: a local millisecond takes 1_000_200ns of true time
    assert local_interval_to_true(1_000_000, 200) == 1_000_200


def test_fast_clock_compresses_true_time_rounding_up():
    # -200ppm: ceil(1e12 / 1_000_200)
    assert local_interval_to_true(1_000_000, -200) == 999_801


def test_zero_drift_is_identity():
    assert local_interval_to_true(123_456, 0) == 123_456
    assert true_interval_to_local(123_456, 0) == 123_456


def test_drift_round_trip_stays_within_envelope():
    for d in (-200, -37, 0, 1, 199, 200):
        for local in (1, 999, 100_000, 1_000_000_007):
            true = local_interval_to_true(local, d)
            # inside [L/(1+D), L*(1+D)] for D=200ppm
            assert true * 1_000_000 >= local * (1_000_000 - 200) - 1_000_000
            assert true * 1_000_000 <= local * (1_000_000 + 200) + 1_000_000
            back = true_interval_to_local(true, d)
            assert abs(back - local) <= 1


# -- event loop ---------------------------------------------------------------


def test_events_fire_in_time_order_with_fifo_ties():
    sim = Simulation(seed=7)
    seen = []
    sim.at(30, lambda: seen.append("c"))
    sim.at(10, lambda: seen.append("a"))
    sim.at(10, lambda: seen.append("b"))  # same instant: insertion order
    sim.run_until(100)
    assert seen == ["a", "b", "c"]


def test_run_until_advances_clock_to_deadline():
    sim = Simulation(seed=7)
    sim.run_until(5_000)
    assert sim.now == 5_000


def test_cancelled_event_never_fires():
    sim = Simulation(seed=7)
    seen = []
    ev = sim.at(10, lambda: seen.append("x"))
    ev.cancel()
    sim.run_until(100)
    assert seen == []


def test_stop_predicate_halts_mid_run():
    sim = Simulation(seed=7)
    seen = []
    for t in (10, 20, 30):
        sim.at(t, lambda t=t: seen.append(t))
    sim.run_until(100, stop=lambda: len(seen) == 2)
    assert seen == [10, 20]
    assert sim.now == 20


def test_named_rng_streams_are_independent_and_reproducible():
    a = Simulation(seed=9)
    b = Simulation(seed=9)
    assert a.rng("x").random() == b.rng("x").random()
    # draws on one stream leave the other untouched
    c = Simulation(seed=9)
    c.rng("y").random()
    assert c.rng("x").random() == Simulation(seed=9).rng("x").random()
    assert Simulation(seed=9).rng("x").random() != \
        Simulation(seed=10).rng("x").random()


def test_future_callbacks_run_as_events_not_inline():
    sim = Simulation(seed=1)
    fut = Future(sim)
    seen = []
    fut.add_done(lambda v: seen.append(v))
    fut.resolve(42)
    assert seen == []  # not yet: callback is scheduled, not inline
    sim.run_until(sim.now)
    assert seen == [42]
    # late subscription still fires
    fut.add_done(lambda v: seen.append(v + 1))
    sim.run_until(sim.now)
    assert seen == [42, 43]


def test_resolve_is_one_shot():
    sim = Simulation(seed=1)
    fut = Future(sim)
    fut.resolve("first")
    fut.resolve("second")
    assert fut.value == "first"


# -- local clocks -------------------------------------------------------------


def test_local_timer_on_slow_clock_fires_late_in_true_time():
    sim, net = one_region()
    slow = Host(sim, net, "slow.R0", "R0", drift_ppm=200)
    fired = []
    slow.k.set_local_timer(1_000_000, lambda: fired.append(sim.now))
    sim.run_until(2_000_000)
    assert fired == [1_000_200]


def test_local_timer_on_fast_clock_fires_early_in_true_time():
    sim, net = one_region()
    fast = Host(sim, net, "fast.R0", "R0", drift_ppm=-200)
    fired = []
    fast.k.set_local_timer(1_000_000, lambda: fired.append(sim.now))
    sim.run_until(2_000_000)
    assert fired == [999_801]


def test_local_now_offsets_differ_between_nodes():
    sim, net = one_region()
    a = Host(sim, net, "a.R0", "R0")
    b = Host(sim, net, "b.R0", "R0")
    assert a.k.local_now() != b.k.local_now()


# -- messaging ----------------------------------------------------------------


def test_send_delivers_within_jitter_bounds():
    sim, net = one_region(rtt_ms=10.0)  # one-way 5ms
    a = Host(sim, net, "a.R0", "R0")
    b = Host(sim, net, "b.R0", "R0")
    a.k.send("b.R0", "hello")
    sim.run_until(20 * MS)
    assert len(b.inbox) == 1
    # delivery stamped into sim.now history: bounded by ±10% jitter
    assert net.delivered == 1


def test_rpc_round_trip_and_timeout():
    sim, net = one_region()

    class Echo(Host):
        def handle(self, env):
            self.k.reply(env, ("echo", env.payload))

    echo = Echo(sim, net, "echo.R0", "R0")
    mute = Host(sim, net, "mute.R0", "R0")  # never replies
    caller = Host(sim, net, "caller.R0", "R0")

    def program():
        good = yield caller.k.rpc("echo.R0", "ping", 50 * MS)
        bad = yield caller.k.rpc("mute.R0", "ping", 5 * MS)
        return good, bad

    good, bad = drive(sim, caller.k, program())
    assert good == ("echo", "ping")
    assert bad is RPC_TIMEOUT


def test_drop_prob_one_loses_everything():
    sim, net = one_region(faults=FaultSchedule(drop_prob=1.0))
    a = Host(sim, net, "a.R0", "R0")
    b = Host(sim, net, "b.R0", "R0")
    for _ in range(20):
        a.k.send("b.R0", "x")
    sim.run_until(10 * MS)
    assert b.inbox == []
    assert net.dropped == 20


def test_partition_window_cuts_cross_region_traffic_only():
    fs = FaultSchedule(partitions=[
        PartitionWindow(frozenset({"R1"}), start_ns=0, end_ns=10 * MS)])
    sim = Simulation(seed=3)
    net = Network(sim, LatencyMatrix(
        ["R0", "R1"],
        {("R0", "R0"): 0.2, ("R1", "R1"): 0.2, ("R0", "R1"): 1.0}), fs)
    a0 = Host(sim, net, "a.R0", "R0")
    b0 = Host(sim, net, "b.R0", "R0")
    a1 = Host(sim, net, "a.R1", "R1")
    a0.k.send("a.R1", "cross")   # cut
    a0.k.send("b.R0", "intra")   # unaffected
    sim.run_until(5 * MS)
    assert [e.payload for e in b0.inbox] == ["intra"]
    assert a1.inbox == []
    # after the window closes, traffic flows again
    sim.run_until(11 * MS)
    a0.k.send("a.R1", "late")
    sim.run_until(20 * MS)
    assert [e.payload for e in a1.inbox] == ["late"]


def test_crash_drops_inbound_and_kills_tasks_and_timers():
    sim, net = one_region()
    a = Host(sim, net, "a.R0", "R0")
    b = Host(sim, net, "b.R0", "R0")
    fired = []
    a.k.set_local_timer(5 * MS, lambda: fired.append("timer"))

    def task():
        yield a.k.sleep_local(5 * MS)
        fired.append("task")

    a.k.spawn(task())
    sim.run_until(1 * MS)
    a.crash()
    b.k.send("a.R0", "for-the-dead")
    sim.run_until(20 * MS)
    assert fired == []
    assert a.inbox == []
    # a fresh incarnation serves again, but old work stays dead
    a.restart()
    b.k.send("a.R0", "for-the-living")
    sim.run_until(40 * MS)
    assert [e.payload for e in a.inbox] == ["for-the-living"]


def test_reorder_holds_messages_back():
    # with reorder_prob=1 every message is delayed 1.5-3x its base latency;
    # a later send can overtake an earlier one given enough spread
    sim, net = one_region(faults=FaultSchedule(reorder_prob=1.0),
                          rtt_ms=10.0, jitter_pct=0.0)
    a = Host(sim, net, "a.R0", "R0")
    b = Host(sim, net, "b.R0", "R0")
    a.k.send("b.R0", 1)
    sim.run_until(20 * MS)
    assert [e.payload for e in b.inbox] == [1]
    # one-way base is 5ms; reorder stretched it beyond that
    assert sim.now >= int(5 * MS * 1.5) - 1


def test_duplicate_node_id_rejected():
    sim, net = one_region()
    Host(sim, net, "dup.R0", "R0")
    with pytest.raises(ValueError):
        Host(sim, net, "dup.R0", "R0")
