"""Stress harness: concurrent workloads with online and offline checking.

A run spawns worker threads that execute deterministic per-thread op streams
(derived from the seed) against a fresh structure, while an optional
maintenance thread flushes periodically. Every search is checked online
against the history the moment it returns. At configurable points the
harness pauses all participants at a gate (workers park between operations,
so nobody holds node locks), snapshots the structure, runs the full
invariant suite plus cross-snapshot monotonicity, and resumes. At the end
the recorded trace must linearize.

Nothing here trusts the structure under test: every verdict comes from the
history, the snapshot checkers, or the trace, never from the structure's own
bookkeeping.
"""

from __future__ import annotations

import itertools
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

from .checker import (
    CheckResult,
    InvariantReport,
    LinearizationResult,
    check_inv2_monotone,
    check_invariants,
    linearize,
)
from .core import TOMBSTONE, MulticopyError
from .df import DfStructure
from .fixtures import FixtureReport, replay_fixture  # re-exported for the CLI
from .graph import MulticopyGraph, load_graph, save_graph
from .history import (
    HistoryCorruptionError,
    HistoryPredicateReport,
    SearchEvent,
    Trace,
    UpsertEvent,
)
from .lsm import LsmStructure

__all__ = [
    "WorkloadConfig",
    "StressReport",
    "CheckpointRecord",
    "run_stress",
    "replay_fixture",
    "FixtureReport",
    "check_files",
]


@dataclass
class WorkloadConfig:
    keyspace_size: int = 64
    threads: int = 4
    ops_per_thread: int = 1000
    # Percent weights: search / upsert / delete. Must sum to 100.
    mix: tuple[int, int, int] = (70, 25, 5)
    structure: str = "lsm"  # lsm | df
    root_capacity: int = 8
    growth_factor: int = 2
    maintenance: str = "periodic:2"  # on-fail | periodic:<ms> | off
    seed: int = 0
    # Per-thread op cadence between quiescent checkpoints; 0 = final only.
    checkpoint_every: int = 2000

    def validate(self) -> None:
        if sum(self.mix) != 100 or any(m < 0 for m in self.mix):
            raise MulticopyError(f"mix must be three percentages summing to 100, got {self.mix}")
        if self.structure not in ("lsm", "df"):
            raise MulticopyError(f"structure must be lsm or df, got {self.structure!r}")
        if self.threads < 1 or self.ops_per_thread < 0:
            raise MulticopyError("threads must be >= 1 and ops_per_thread >= 0")
        _parse_maintenance(self.maintenance)

    def to_json(self) -> dict:
        return {
            "keyspace_size": self.keyspace_size,
            "threads": self.threads,
            "ops_per_thread": self.ops_per_thread,
            "mix": list(self.mix),
            "structure": self.structure,
            "root_capacity": self.root_capacity,
            "growth_factor": self.growth_factor,
            "maintenance": self.maintenance,
            "seed": self.seed,
            "checkpoint_every": self.checkpoint_every,
        }


def _parse_maintenance(spec: str) -> tuple[str, float]:
    if spec in ("on-fail", "off"):
        return spec, 0.0
    if spec == "periodic":
        return "periodic", 0.002
    if spec.startswith("periodic:"):
        ms = float(spec.split(":", 1)[1])
        if ms <= 0:
            raise MulticopyError("periodic maintenance interval must be positive")
        return "periodic", ms / 1000.0
    raise MulticopyError(
        f"maintenance must be on-fail, periodic[:<ms>] or off, got {spec!r}"
    )


def generate_ops(config: WorkloadConfig, thread_id: int) -> list[tuple]:
    """The deterministic op stream for one worker. Seed and thread id fully
    determine it; the shared structure provides the only nondeterminism."""
    rng = random.Random(f"{config.seed}:{thread_id}")
    s_cut = config.mix[0]
    u_cut = config.mix[0] + config.mix[1]
    ops = []
    for _ in range(config.ops_per_thread):
        roll = rng.randrange(100)
        key = rng.randrange(config.keyspace_size)
        if roll < s_cut:
            ops.append(("search", key))
        elif roll < u_cut:
            ops.append(("upsert", key, rng.randrange(10_000)))
        else:
            ops.append(("delete", key))
    return ops


class PauseGate:
    """Cooperative pause point. Workers poll it between operations; pause()
    returns once every registered participant is parked, which is what makes
    a checkpoint quiescent without touching any node lock."""

    def __init__(self):
        self._cond = threading.Condition()
        self._pausing = False
        self._active = 0
        self._paused = 0

    def register(self) -> None:
        with self._cond:
            self._active += 1

    def deregister(self) -> None:
        with self._cond:
            self._active -= 1
            self._cond.notify_all()

    def wait_if_paused(self) -> None:
        with self._cond:
            if not self._pausing:
                return
            self._paused += 1
            self._cond.notify_all()
            while self._pausing:
                self._cond.wait()
            self._paused -= 1

    def pause(self) -> None:
        with self._cond:
            self._pausing = True
            while self._paused < self._active:
                self._cond.wait()

    def resume(self) -> None:
        with self._cond:
            self._pausing = False
            self._cond.notify_all()


@dataclass
class CheckpointRecord:
    ops_done: int
    invariants: InvariantReport
    monotone: Optional[CheckResult]  # None for the first checkpoint

    @property
    def ok(self) -> bool:
        return self.invariants.ok and (self.monotone is None or self.monotone.ok)

    def to_json(self) -> dict:
        return {
            "ops_done": self.ops_done,
            "ok": self.ok,
            "invariants": self.invariants.to_json(),
            "monotone": None if self.monotone is None else self.monotone.to_json(),
        }


@dataclass
class StressReport:
    config: WorkloadConfig
    duration_s: float = 0.0
    total_ops: int = 0
    search_count: int = 0
    upsert_count: int = 0
    recency_violations: list[dict] = field(default_factory=list)
    lock_order_violations: list[dict] = field(default_factory=list)
    checkpoints: list[CheckpointRecord] = field(default_factory=list)
    linearization: Optional[LinearizationResult] = None
    history_predicates: Optional[HistoryPredicateReport] = None
    final_nodes: int = 0
    trace: Optional[Trace] = None
    snapshot: Optional[MulticopyGraph] = None

    @property
    def throughput(self) -> float:
        return self.total_ops / self.duration_s if self.duration_s > 0 else 0.0

    @property
    def ok(self) -> bool:
        if self.recency_violations or self.lock_order_violations:
            return False
        if any(not c.ok for c in self.checkpoints):
            return False
        if self.linearization is not None and not self.linearization.ok:
            return False
        if self.history_predicates is not None and not self.history_predicates.ok:
            return False
        return True

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "config": self.config.to_json(),
            "duration_s": round(self.duration_s, 3),
            "total_ops": self.total_ops,
            "throughput_ops_s": round(self.throughput, 1),
            "searches": self.search_count,
            "upserts": self.upsert_count,
            "recency_violations": self.recency_violations[:20],
            "recency_violation_count": len(self.recency_violations),
            "lock_order_violations": self.lock_order_violations[:20],
            "checkpoints": [c.to_json() for c in self.checkpoints],
            "linearization": None
            if self.linearization is None
            else self.linearization.to_json(),
            "history_predicates": None
            if self.history_predicates is None
            else {
                "init": self.history_predicates.init_ok,
                "unique": self.history_predicates.unique_ok,
                "clock": self.history_predicates.clock_ok,
            },
            "final_nodes": self.final_nodes,
        }

    def format_text(self) -> str:
        lines = [
            f"structure={self.config.structure} threads={self.config.threads} "
            f"ops/thread={self.config.ops_per_thread} seed={self.config.seed}",
            f"ran {self.total_ops} ops in {self.duration_s:.2f}s "
            f"({self.throughput:.0f} ops/s), {self.final_nodes} nodes at end",
            f"recency violations: {len(self.recency_violations)}",
            f"lock order violations: {len(self.lock_order_violations)}",
        ]
        for i, c in enumerate(self.checkpoints):
            lines.append(
                f"checkpoint {i} at {c.ops_done} ops: "
                + ("ok" if c.ok else "FAILED")
            )
            if not c.invariants.ok:
                for e in c.invariants.failures():
                    lines.append(f"    {e.check_id}: {e.witnesses[:2]}")
            if c.monotone is not None and not c.monotone.ok:
                lines.append(f"    inv2_reach_monotone: {c.monotone.witnesses[:2]}")
        if self.linearization is not None:
            lines.append(
                "linearization: "
                + ("ok" if self.linearization.ok else f"FAILED {self.linearization.failure}")
            )
        if self.history_predicates is not None:
            lines.append(
                "history predicates: "
                + ("ok" if self.history_predicates.ok else "FAILED")
            )
        lines.append("result: " + ("OK" if self.ok else "FAILURES FOUND"))
        return "\n".join(lines)


def _build_structure(config: WorkloadConfig):
    if config.structure == "lsm":
        return LsmStructure.create(
            config.keyspace_size,
            config.root_capacity,
            config.growth_factor,
            flush_on_full=False,
        )
    return DfStructure.create(
        config.keyspace_size, config.root_capacity, flush_on_full=False
    )


def run_stress(
    config: WorkloadConfig,
    *,
    record: bool = True,
    online_checks: bool = True,
    checkpoints: bool = True,
    trace_out: Optional[str] = None,
    snapshot_out: Optional[str] = None,
) -> StressReport:
    """Execute one configured run; see module doc. With record/online/
    checkpoints all off this degenerates into a pure benchmark loop."""
    config.validate()
    report = StressReport(config=config)
    structure = _build_structure(config)
    gate = PauseGate()
    mode, interval = _parse_maintenance(config.maintenance)

    if mode == "on-fail":
        def on_full():
            gate.wait_if_paused()
            structure.maintenance_pass()
    else:
        def on_full():
            # Someone else (or nobody) flushes; park if a checkpoint wants
            # everyone quiet, otherwise give the flusher a moment.
            gate.wait_if_paused()
            time.sleep(2e-4)

    structure.set_on_root_full(on_full)

    seq = itertools.count()
    done = [0] * config.threads
    events_per_thread: list[list] = [[] for _ in range(config.threads)]
    violations_per_thread: list[list] = [[] for _ in range(config.threads)]
    worker_errors: list[BaseException] = []

    def worker(tid: int) -> None:
        ops = generate_ops(config, tid)
        events = events_per_thread[tid]
        violations = violations_per_thread[tid]
        gate.register()
        try:
            for i, op in enumerate(ops):
                gate.wait_if_paused()
                if op[0] == "search":
                    key = op[1]
                    inv = next(seq)
                    probe = structure.search_timed(key)
                    resp = next(seq)
                    rec = structure.history.check_search_recency(
                        key, probe.value, probe.ts, probe.snap
                    )
                    if online_checks and not rec.ok:
                        violations.append(rec.to_dict())
                    if record:
                        events.append(
                            SearchEvent(
                                thread=tid,
                                key=key,
                                value=probe.value,
                                t0=rec.t0,
                                tp=probe.ts,
                                snap=probe.snap,
                                inv=inv,
                                resp=resp,
                            )
                        )
                else:
                    key = op[1]
                    value = TOMBSTONE if op[0] == "delete" else op[2]
                    inv = next(seq)
                    ts = structure.upsert_timed(key, value)
                    resp = next(seq)
                    if record:
                        events.append(
                            UpsertEvent(
                                thread=tid, key=key, value=value,
                                ts=ts, inv=inv, resp=resp,
                            )
                        )
                done[tid] = i + 1
        except BaseException as e:  # surfaced after join; a worker must not die silently
            worker_errors.append(e)
            raise
        finally:
            gate.deregister()

    stop_flusher = threading.Event()

    def flusher() -> None:
        gate.register()
        try:
            while not stop_flusher.is_set():
                gate.wait_if_paused()
                structure.maintenance_pass()
                stop_flusher.wait(interval)
        finally:
            gate.deregister()

    threads = [
        threading.Thread(target=worker, args=(tid,), name=f"worker-{tid}")
        for tid in range(config.threads)
    ]
    flusher_thread = (
        threading.Thread(target=flusher, name="flusher") if mode == "periodic" else None
    )

    prev_graph: Optional[MulticopyGraph] = None

    def take_checkpoint(quiesce: bool) -> None:
        nonlocal prev_graph
        if quiesce:
            gate.pause()
        try:
            g = structure.snapshot_graph()
            inv = check_invariants(g, structure.history, structure.clock)
            mono = None if prev_graph is None else check_inv2_monotone(prev_graph, g)
            report.checkpoints.append(
                CheckpointRecord(ops_done=sum(done), invariants=inv, monotone=mono)
            )
            prev_graph = g
        finally:
            if quiesce:
                gate.resume()

    started = time.monotonic()
    for t in threads:
        t.start()
    if flusher_thread:
        flusher_thread.start()

    if checkpoints and config.checkpoint_every > 0:
        mark = config.checkpoint_every * config.threads
        while any(t.is_alive() for t in threads):
            time.sleep(0.001)
            if sum(done) >= mark:
                take_checkpoint(quiesce=True)
                mark += config.checkpoint_every * config.threads
    for t in threads:
        t.join()
    if flusher_thread:
        stop_flusher.set()
        flusher_thread.join()
    report.duration_s = time.monotonic() - started

    if worker_errors:
        raise worker_errors[0]

    if checkpoints:
        take_checkpoint(quiesce=False)

    report.total_ops = sum(done)
    for v in violations_per_thread:
        report.recency_violations.extend(v)
    report.lock_order_violations = list(structure.lock_order_violations)
    report.final_nodes = len(structure.node_ids())

    if record:
        trace = Trace(keyspace_size=config.keyspace_size)
        for evs in events_per_thread:
            trace.events.extend(evs)
        trace.events.sort(key=lambda e: e.inv)
        report.trace = trace
        report.search_count = len(trace.searches())
        report.upsert_count = len(trace.upserts())
        report.linearization = linearize(trace)
        if trace_out:
            trace.dump(trace_out)

    report.history_predicates = structure.history.verify_predicates(structure.clock)
    report.snapshot = structure.snapshot_graph()
    if snapshot_out:
        save_graph(report.snapshot, snapshot_out)
    return report


def check_files(snapshot_path: str, trace_path: str) -> tuple[bool, dict]:
    """Offline verification of a written snapshot/trace pair.

    The history is rebuilt from the trace's upserts, so the snapshot's
    stored copies must be justified by the trace and the trace itself must
    linearize. Returns (ok, json-able report)."""
    out: dict = {"snapshot": snapshot_path, "trace": trace_path}
    g = load_graph(snapshot_path)
    trace = Trace.load(trace_path)
    if trace.keyspace_size < g.keyspace_size:
        trace.keyspace_size = g.keyspace_size
    try:
        h, clock = trace.rebuild_history()
    except HistoryCorruptionError as e:
        out["ok"] = False
        out["error"] = f"trace does not form a valid history: {e}"
        return False, out
    inv = check_invariants(g, h, clock)
    lin = linearize(trace)
    preds = h.verify_predicates(clock)
    out["invariants"] = inv.to_json()
    out["linearization"] = lin.to_json()
    out["history_predicates"] = {
        "init": preds.init_ok, "unique": preds.unique_ok, "clock": preds.clock_ok,
    }
    ok = inv.ok and lin.ok and preds.ok
    out["ok"] = ok
    return ok, out
