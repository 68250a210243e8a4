"""Timestamp batches and the per-node proxy."""

import pytest

from conftest import Host, drive, one_region
from chronokv.clock import ClockConfig, OracleServer, UncertainTime
from chronokv.errors import InvalidConfig, OracleUnavailable
from chronokv.messages import TsReq, TsErr
from chronokv.simnet import MS, FaultSchedule, OracleOutage
from chronokv.tsbatch import (
    EQUAL,
    GREATER,
    LESS,
    BatchState,
    Timestamp,
    TsProxy,
    build_batch,
    commit_wait_elapsed,
    commit_wait_ns,
    compare,
    validate_batch_params,
)

TTL = 100_000
STEP = 10
EPS = 100_000
D = 200


def batch(latest=1_000_000, acquired_local=0):
    return build_batch(UncertainTime(latest - 2 * EPS, latest, 0),
                       TTL, STEP, acquired_local, D)


# -- batch construction --------------------------------------------------------


def test_batch_covers_one_ttl_starting_one_ttl_above_the_reading():
    b = batch(latest=1_000_000)
    assert b.low == 1_100_000
    assert b.up == 1_200_000
    assert b.capacity == 10_000
    assert b.server_id == 0


def test_batch_issues_the_grid_in_order():
    b = batch(latest=1_000_000)
    got = [b.next_timestamp(local_now=0) for _ in range(3)]
    assert got == [Timestamp(1_100_000, 0), Timestamp(1_100_010, 0),
                   Timestamp(1_100_020, 0)]


def test_batch_exhausts_after_capacity():
    b = build_batch(UncertainTime(0, 100, 7), ttl_ns=50, step_ns=10,
                    acquired_local=0, max_drift_ppm=D)
    assert b.capacity == 5
    for i in range(5):
        ts = b.next_timestamp(0)
        assert ts == Timestamp(150 + 10 * i, 7)
    assert b.next_timestamp(0) is BatchState.EXHAUSTED


def test_batch_expiry_boundary_is_drift_compensated():
    b = batch(acquired_local=0)
    # expired once elapsed*(1e6+200) >= ttl*1e6: first failing integer
    assert not b.expired(99_980)
    assert b.expired(99_981)
    assert b.next_timestamp(99_981) is BatchState.EXPIRED


def test_ttl_must_be_a_multiple_of_step():
    with pytest.raises(InvalidConfig):
        validate_batch_params(100_000, 3)
    with pytest.raises(InvalidConfig):
        validate_batch_params(0, 10)
    validate_batch_params(100_000, 10)  # fine


# -- ordering -------------------------------------------------------------------


def test_timestamps_order_by_nanos_then_server():
    assert compare(Timestamp(5, 0), Timestamp(6, 0)) is LESS
    assert compare(Timestamp(6, 0), Timestamp(5, 9)) is GREATER
    assert compare(Timestamp(5, 1), Timestamp(5, 2)) is LESS
    assert compare(Timestamp(5, 2), Timestamp(5, 2)) is EQUAL


# -- commit wait ------------------------------------------------------------------


def test_commit_wait_constants():
    assert commit_wait_ns(TTL, EPS, D) == 400_080
    assert commit_wait_ns(TTL, EPS, D, strawman=True) == 200_040
    assert commit_wait_ns(TTL, EPS, 0) == 400_000


def test_commit_wait_rounds_up():
    # 2*(1+0)*1.0002 = 2.0004 -> 3
    assert commit_wait_ns(1, 0, D) == 3


def test_commit_wait_elapsed_is_a_plain_deadline():
    assert not commit_wait_elapsed(100, 99)
    assert commit_wait_elapsed(100, 100)


# -- proxy over the wire ------------------------------------------------------------


def proxy_rig(seed=1, faults=None, mode="batched", drift_ppm=0):
    sim, net = one_region(seed=seed, faults=faults)
    cfg = ClockConfig(epsilon_ns=EPS, max_drift_ppm=D)
    OracleServer(sim, net, "ts.R0", "R0", server_id=0, cfg=cfg,
                 step_ns=STEP, ttl_ns=TTL,
                 outages=(faults.oracle_outages if faults else None))
    host = Host(sim, net, "h.R0", "R0", drift_ppm=drift_ppm)
    proxy = TsProxy(host.k, ["ts.R0"], ttl_ns=TTL, step_ns=STEP,
                    epsilon_ns=EPS, max_drift_ppm=D, mode=mode)
    return sim, host, proxy


def test_proxy_serves_a_burst_from_one_fetch():
    sim, host, proxy = proxy_rig()

    def burst():
        out = []
        for _ in range(50):
            ts = yield from proxy.acquire()
            out.append(ts)
        return out

    got = drive(sim, host.k, burst())
    assert len(got) == 50
    assert got == sorted(got)
    assert len(set(got)) == 50
    assert proxy.fetches == 1
    assert proxy.served_local == 49
    assert proxy.requests == 50


def test_proxy_refetches_once_the_batch_expires():
    sim, host, proxy = proxy_rig()

    def spaced():
        a = yield from proxy.acquire()
        yield host.k.sleep_local(TTL * 2)
        b = yield from proxy.acquire()
        return a, b

    a, b = drive(sim, host.k, spaced())
    assert proxy.fetches == 2
    assert b > a


def test_concurrent_acquirers_share_the_inflight_fetch():
    sim, host, proxy = proxy_rig()
    out = []

    def one():
        ts = yield from proxy.acquire()
        out.append(ts)

    for _ in range(8):
        host.k.spawn(one())
    sim.run_until(50 * MS, stop=lambda: len(out) == 8)
    assert len(out) == 8
    assert len(set(out)) == 8
    assert proxy.fetches == 1


def test_proxy_times_out_to_oracle_unavailable():
    faults = FaultSchedule(oracle_outages=[
        OracleOutage(server_id=0, start_ns=0, end_ns=1 << 62)])
    sim, host, proxy = proxy_rig(faults=faults)

    def attempt():
        try:
            yield from proxy.acquire()
            return "issued"
        except OracleUnavailable:
            return "unavailable"

    assert drive(sim, host.k, attempt()) == "unavailable"


def test_strawman_mode_pays_a_round_trip_every_time():
    sim, host, proxy = proxy_rig(mode="strawman")

    def burst():
        out = []
        for _ in range(20):
            ts = yield from proxy.acquire()
            out.append(ts)
        return out

    got = drive(sim, host.k, burst())
    assert len(set(got)) == 20
    assert got == sorted(got)
    assert proxy.fetches == 20
    assert proxy.served_local == 0
    assert proxy.cwt_ns == 200_040


def test_unknown_mode_rejected():
    sim, host, _ = proxy_rig()
    with pytest.raises(InvalidConfig):
        TsProxy(host.k, ["ts.R0"], ttl_ns=TTL, step_ns=STEP, epsilon_ns=EPS,
                max_drift_ppm=D, mode="psychic")
    with pytest.raises(InvalidConfig):
        TsProxy(host.k, [], ttl_ns=TTL, step_ns=STEP, epsilon_ns=EPS,
                max_drift_ppm=D)
