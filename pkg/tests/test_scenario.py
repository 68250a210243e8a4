"""Scenario construction, validation, and YAML loading."""

import pytest

from chronokv.errors import InvalidConfig
from chronokv.scenario import (
    Scenario,
    WorkloadSpec,
    full_rtt_table,
    load_scenario,
    scenario_from_dict,
)


def test_defaults_are_a_five_region_wide_area_cluster():
    sc = Scenario()
    assert sc.regions == ["SH", "BJ", "GZ", "GY", "SG"]
    assert sc.data_node_ids() == ["d0.SH", "d1.BJ", "d2.GZ", "d3.GY", "d4.SG"]
    assert sc.coordinator_ids() == ["c0.SH", "c1.BJ", "c2.GZ", "c3.GY", "c4.SG"]
    assert sc.stop_on_idle is True
    assert sc.interval_ns == 100_000_000


def test_rtt_table_covers_every_pair_and_takes_overrides():
    t = full_rtt_table(["SH", "BJ", "SG"], overrides={"SH-BJ": 10.0})
    assert t[("SH", "SH")] == 0.2
    assert t[("SH", "BJ")] == 10.0
    assert t[("BJ", "SG")] == 77.6
    assert t[("SH", "SG")] == 69.3


def test_scenario_from_dict_round_trips_faults():
    sc = scenario_from_dict({
        "name": "full",
        "seed": 5,
        "duration_ms": 2_000,
        "regions": ["SH", "BJ"],
        "data_nodes": ["SH", "BJ"],
        "standbys": ["SH"],
        "replicate_to": ["BJ"],
        "coordinators": ["SH"],
        "workload": {"kind": "rmw", "keys": 10, "ops_per_txn": 2},
        "faults": {
            "drop_prob": 0.01,
            "reorder_prob": 0.05,
            "crashes": [{"node": "c0.SH", "at_ms": 500, "restart_at_ms": 800},
                        {"node": "d0.SH", "at_ms": 900}],
            "partitions": [{"regions": ["SH", "BJ"],
                            "from_ms": 100, "to_ms": 200}],
            "oracle_outages": [{"region": "BJ", "from_ms": 50, "to_ms": 60}],
            "takeovers": [{"role": "rec/d0.SH", "to": "s0.SH", "at_ms": 950}],
            "msg_filters": [{"kinds": ["decide"], "prob": 0.5, "to_ms": 100}],
        },
    })
    assert sc.workload.kind == "rmw"
    fs = sc.faults
    assert fs.drop_prob == 0.01 and fs.reorder_prob == 0.05
    assert [c.node for c in fs.crashes] == ["c0.SH", "d0.SH"]
    assert fs.crashes[0].restart_at_ns == 800_000_000
    assert fs.crashes[1].restart_at_ns is None
    assert fs.partitions[0].regions == frozenset({"SH", "BJ"})
    assert fs.oracle_outages[0].server_id == 1  # BJ is regions[1]
    assert fs.takeovers[0].to_node == "s0.SH"
    assert fs.msg_filters[0].kinds == frozenset({"decide"})


@pytest.mark.parametrize("bad", [
    dict(ts_mode="quantum"),
    dict(replica_read_mode="psychic"),
    dict(data_nodes=[]),
    dict(coordinators=[]),
    dict(interval_ms=0),
    dict(data_nodes=["MARS"]),
    dict(ttl_ns=105, step_ns=10),        # ttl must be a step multiple
    dict(workload=WorkloadSpec(kind="nope")),
])
def test_invalid_scenarios_are_rejected(bad):
    with pytest.raises(InvalidConfig):
        Scenario(**bad)


def test_oracle_outage_for_unknown_region_is_rejected():
    with pytest.raises(InvalidConfig, match="unknown region"):
        scenario_from_dict({
            "regions": ["SH"], "data_nodes": ["SH"], "coordinators": ["SH"],
            "faults": {"oracle_outages": [
                {"region": "XX", "from_ms": 0, "to_ms": 1}]},
        })


def test_load_scenario_reads_yaml(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text(
        "name: from-yaml\n"
        "seed: 9\n"
        "regions: [SH, BJ]\n"
        "data_nodes: [SH]\n"
        "coordinators: [BJ]\n"
        "workload: {kind: blind, write_ratio: 1.0}\n"
        "faults: {drop_prob: 0.02}\n"
    )
    sc = load_scenario(str(p))
    assert sc.name == "from-yaml"
    assert sc.seed == 9
    assert sc.coordinator_ids() == ["c0.BJ"]
    assert sc.workload.kind == "blind"
    assert sc.faults.drop_prob == 0.02


def test_load_scenario_rejects_non_mapping_yaml(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("- just\n- a\n- list\n")
    with pytest.raises(InvalidConfig, match="mapping"):
        load_scenario(str(p))
