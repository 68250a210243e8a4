"""The chronokv CLI driven in-process."""

import json

import pytest

from chronokv.cli import main


def small_yaml(tmp_path, **extra):
    lines = [
        "name: cli-unit",
        "seed: 3",
        "duration_ms: 30000",
        "regions: [SH, BJ]",
        "data_nodes: [SH]",
        "replicate_to: [BJ]",
        "coordinators: [SH]",
        "clients_per_coordinator: 1",
        "txns_per_client: 12",
        "interval_ms: 50",
        "workload: {kind: ycsb, keys: 16, write_ratio: 0.8}",
    ]
    lines += [f"{k}: {v}" for k, v in extra.items()]
    p = tmp_path / "scenario.yaml"
    p.write_text("\n".join(lines) + "\n")
    return str(p)


def test_run_prints_a_summary_and_writes_a_trace(tmp_path, capsys):
    trace = tmp_path / "out.trace"
    rc = main(["run", "--scenario", small_yaml(tmp_path),
               "--trace", str(trace)])
    assert rc == 0
    out = capsys.readouterr().out
    summary = json.loads(out)
    assert summary["txns"] == 12
    assert summary["committed"] + summary["aborted"] == 12
    lines = trace.read_text().splitlines()
    header = json.loads(lines[0])
    assert header["seed"] == 3 and header["interval_ms"] == 50
    assert len(lines) > 12


def test_run_seed_override_changes_the_run(tmp_path, capsys):
    sc = small_yaml(tmp_path)
    main(["run", "--scenario", sc])
    first = capsys.readouterr().out
    main(["run", "--scenario", sc, "--seed", "99"])
    second = capsys.readouterr().out
    assert json.loads(first)["seed"] == 3
    assert json.loads(second)["seed"] == 99


def test_check_passes_on_a_clean_trace(tmp_path, capsys):
    trace = tmp_path / "clean.trace"
    main(["run", "--scenario", small_yaml(tmp_path), "--trace", str(trace)])
    capsys.readouterr()
    csv = tmp_path / "vis.csv"
    rc = main(["check", "--trace", str(trace), "--csv", str(csv)])
    out = capsys.readouterr().out
    assert rc == 0
    assert "strict-serializability" in out and "FAIL" not in out
    assert csv.read_text().startswith("commit_ms,delay_ms\n")


def test_check_fails_on_a_trace_with_a_planted_violation(tmp_path, capsys):
    # a commit stamped after the transaction already released
    trace = tmp_path / "bad.trace"
    trace.write_text("\n".join([
        json.dumps({"kind": "header", "schema": 1,
                    "interval_ms": 100, "epsilon_ns": 100000}),
        json.dumps([1000, "txn_begin", {"txn": "t0"}]),
        json.dumps([2000, "txn_end", {"txn": "t0", "status": "committed",
                                      "ts": [5000, 0], "epoch": 1}]),
    ]) + "\n")
    rc = main(["check", "--trace", str(trace)])
    out = capsys.readouterr().out
    assert rc == 1
    assert "timestamp-in-lifetime: FAIL" in out


def test_check_property_subsets_run_only_their_checkers(tmp_path, capsys):
    trace = tmp_path / "clean.trace"
    main(["run", "--scenario", small_yaml(tmp_path), "--trace", str(trace)])
    capsys.readouterr()
    rc = main(["check", "--trace", str(trace), "--property", "replica"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "epoch-cuts" in out
    assert "strict-serializability" not in out
    rc = main(["check", "--trace", str(trace), "--property", "visibility"])
    out = capsys.readouterr().out
    assert rc == 0
    assert out.startswith("visibility: ")


def test_bench_ts_reports_batching_stats_in_both_modes(capsys):
    rc = main(["bench-ts", "--mode", "batched", "--n", "3000"])
    assert rc == 0
    batched = json.loads(capsys.readouterr().out)
    rc = main(["bench-ts", "--mode", "strawman", "--n", "200"])
    assert rc == 0
    strawman = json.loads(capsys.readouterr().out)
    assert batched["requests"] == 3000
    assert batched["served_local"] / batched["requests"] > 0.99
    assert strawman["served_local"] == 0
    assert strawman["fetches"] == strawman["requests"] == 200
    assert batched["commit_wait_ns"] > strawman["commit_wait_ns"]


def test_unknown_arguments_exit_with_usage_errors():
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["check", "--trace", "x", "--property", "bogus"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["bench-ts", "--mode", "warp"])
    assert e.value.code == 2
