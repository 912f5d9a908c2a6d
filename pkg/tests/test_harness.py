import json
import threading
import time

import pytest

from multicopy.core import MulticopyError
from multicopy.harness import (
    PauseGate,
    WorkloadConfig,
    check_files,
    generate_ops,
    run_stress,
)


def small_config(**kw):
    base = dict(
        keyspace_size=16,
        threads=2,
        ops_per_thread=150,
        root_capacity=8,
        maintenance="periodic:1",
        seed=7,
        checkpoint_every=50,
    )
    base.update(kw)
    return WorkloadConfig(**base)


def test_generate_ops_is_deterministic_per_seed_and_thread():
    cfg = small_config()
    assert generate_ops(cfg, 0) == generate_ops(cfg, 0)
    assert generate_ops(cfg, 0) != generate_ops(cfg, 1)
    assert generate_ops(cfg, 0) != generate_ops(small_config(seed=8), 0)
    ops = generate_ops(cfg, 0)
    assert len(ops) == cfg.ops_per_thread
    assert all(0 <= op[1] < cfg.keyspace_size for op in ops)


def test_generate_ops_respects_the_mix():
    only_searches = generate_ops(small_config(mix=(100, 0, 0)), 0)
    assert {op[0] for op in only_searches} == {"search"}
    only_writes = generate_ops(small_config(mix=(0, 100, 0)), 3)
    assert {op[0] for op in only_writes} == {"upsert"}
    assert all(0 <= op[2] < 10_000 for op in only_writes)


def test_config_validation():
    with pytest.raises(MulticopyError):
        small_config(mix=(50, 50, 5)).validate()
    with pytest.raises(MulticopyError):
        small_config(structure="btree").validate()
    with pytest.raises(MulticopyError):
        small_config(threads=0).validate()
    with pytest.raises(MulticopyError):
        small_config(maintenance="sometimes").validate()
    with pytest.raises(MulticopyError):
        small_config(maintenance="periodic:0").validate()
    for ok in ("on-fail", "off", "periodic", "periodic:2.5"):
        small_config(maintenance=ok).validate()


def test_pause_gate_quiesces_every_participant():
    gate = PauseGate()
    ticks = [0, 0]
    stop = threading.Event()

    def loop(i):
        gate.register()
        try:
            while not stop.is_set():
                gate.wait_if_paused()
                ticks[i] += 1
        finally:
            gate.deregister()

    threads = [threading.Thread(target=loop, args=(i,)) for i in range(2)]
    for t in threads:
        t.start()
    while ticks[0] == 0 or ticks[1] == 0:
        time.sleep(0.001)
    gate.pause()
    frozen = tuple(ticks)
    time.sleep(0.05)
    assert tuple(ticks) == frozen  # everyone parked, nothing moves
    gate.resume()
    deadline = time.monotonic() + 5
    while tuple(ticks) == frozen and time.monotonic() < deadline:
        time.sleep(0.001)
    assert tuple(ticks) != frozen
    stop.set()
    gate.pause()  # pausing after workers exit must not hang
    gate.resume()
    for t in threads:
        t.join()


def test_stress_run_reports_clean_and_complete():
    cfg = small_config()
    report = run_stress(cfg)
    assert report.ok, report.format_text()
    total = cfg.threads * cfg.ops_per_thread
    assert report.total_ops == total
    assert len(report.trace.events) == total
    assert report.search_count + report.upsert_count == total
    assert report.recency_violations == []
    assert report.lock_order_violations == []
    assert len(report.checkpoints) >= 2  # at least one quiescent plus final
    assert all(c.ok for c in report.checkpoints)
    marks = [c.ops_done for c in report.checkpoints]
    assert marks == sorted(marks) and marks[-1] == total
    assert report.linearization.ok
    assert report.history_predicates.ok
    assert report.throughput > 0
    obj = report.to_json()
    assert obj["ok"] is True and obj["total_ops"] == total
    assert "result: OK" in report.format_text()


def test_stress_on_fail_maintenance_grows_the_structure():
    report = run_stress(small_config(maintenance="on-fail", root_capacity=4))
    assert report.ok, report.format_text()
    assert report.final_nodes > 1


def test_stress_maintenance_off_never_flushes():
    # Root capacity covers the keyspace, so writes never stall.
    report = run_stress(
        small_config(maintenance="off", root_capacity=16, checkpoint_every=0)
    )
    assert report.ok, report.format_text()
    assert report.final_nodes == 1
    assert len(report.checkpoints) == 1  # final only


def test_stress_df_structure():
    report = run_stress(small_config(structure="df", threads=3))
    assert report.ok, report.format_text()
    assert report.final_nodes == 2


def test_bench_mode_skips_recording():
    report = run_stress(
        small_config(), record=False, online_checks=False, checkpoints=False
    )
    assert report.trace is None
    assert report.linearization is None
    assert report.checkpoints == []
    assert report.total_ops == 300
    assert report.ok


def test_stress_writes_verifiable_files(tmp_path):
    trace_path = str(tmp_path / "trace.jsonl")
    snap_path = str(tmp_path / "snapshot.json")
    report = run_stress(
        small_config(), trace_out=trace_path, snapshot_out=snap_path
    )
    assert report.ok
    ok, out = check_files(snap_path, trace_path)
    assert ok, out
    assert out["invariants"]["ok"] and out["linearization"]["ok"]


def test_check_files_rejects_a_doctored_snapshot(tmp_path):
    trace_path = str(tmp_path / "trace.jsonl")
    snap_path = str(tmp_path / "snapshot.json")
    run_stress(
        small_config(maintenance="off", root_capacity=16),
        trace_out=trace_path,
        snapshot_out=snap_path,
    )
    obj = json.loads(open(snap_path).read())
    node, contents = next(iter(obj["contents"].items()))
    key = next(iter(contents))
    contents[key][1] = 999_999  # timestamp nobody ever issued
    open(snap_path, "w").write(json.dumps(obj))
    ok, out = check_files(snap_path, trace_path)
    assert not ok
    assert not out["invariants"]["ok"]


def test_check_files_rejects_a_trace_with_duplicate_timestamps(tmp_path):
    trace_path = str(tmp_path / "trace.jsonl")
    snap_path = str(tmp_path / "snapshot.json")
    run_stress(small_config(), trace_out=trace_path, snapshot_out=snap_path)
    lines = open(trace_path).read().splitlines()
    ups = [i for i, l in enumerate(lines) if '"op": "upsert"' in l]
    a = json.loads(lines[ups[0]])
    b = json.loads(lines[ups[1]])
    a["ts"] = b["ts"]
    lines[ups[0]] = json.dumps(a)
    open(trace_path, "w").write("\n".join(lines) + "\n")
    ok, out = check_files(snap_path, trace_path)
    assert not ok
    assert "error" in out and "valid history" in out["error"]
