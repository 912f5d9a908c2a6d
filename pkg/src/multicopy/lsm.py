"""Concurrent multicopy template over a DAG of nodes.

The traversal and upsert logic here is shape-agnostic: any DAG of node
backends with disjoint outgoing edgesets works. Locking is per node and
deliberately skimpy:

  search takes one lock at a time, looks for a local copy, otherwise asks
      the edgesets where to go, unlocks, and moves on. It never holds two
      locks, so it chases the structure rather than freezing it; recency of
      the returned copy is what the checkers verify, not atomicity.

  upsert works only at the root: take the root lock, append a copy stamped
      with the current clock, publish the (key, value, ts) triple to the
      history and advance the clock, all in the same critical section, so
      releasing the root lock is the moment the upsert takes effect. A full
      root means retry (after giving maintenance a chance).

  compact walks down: lock a full node, pick the successor covering most of
      its live keys (or grow a fresh sink when no edge wants them), lock it,
      move records along the edge, record the moved copies as the parent's
      view of that child (succ_reach), release parent then child, continue
      at the child. At most two locks, always parent before child, which is
      what keeps concurrent compactions deadlock-free on a DAG.

LsmStructure specializes the template to the log-structured shape: a small
in-memory root buffer and a chain of exponentially growing sorted tables
that appears as compaction pushes records down.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from .core import (
    Key,
    MulticopyError,
    TimedValue,
    Timestamp,
    TOMBSTONE,
    Value,
    check_key,
)
from .graph import MulticopyGraph
from .history import UpsertHistory
from .nodes import (
    NodeHandle,
    NodeId,
    ROOT_BUFFER,
    alloc_node,
    fresh_node_id,
    insert_node,
    merge_contents,
)


@dataclass(frozen=True)
class SearchProbe:
    """Instrumented search result: value, its timestamp, and the history
    snapshot (published length) taken at invocation."""

    value: Value
    ts: Timestamp
    snap: int


class MulticopyStructure:
    """Shared engine: per-node locks, clock, history, ghost succ_reach."""

    def __init__(
        self,
        keyspace_size: int,
        root: NodeId,
        handles: Iterable[NodeHandle],
        *,
        growth_factor: int = 2,
        flush_on_full: bool = True,
        clock: Timestamp = 1,
        history: Optional[UpsertHistory] = None,
        succ_reach: Optional[dict[NodeId, dict[Key, TimedValue]]] = None,
    ):
        if keyspace_size <= 0:
            raise MulticopyError("keyspace_size must be positive")
        if growth_factor < 1:
            raise MulticopyError("growth_factor must be >= 1")
        self.keyspace_size = keyspace_size
        self.growth_factor = growth_factor
        self._handles: dict[NodeId, NodeHandle] = {h.id: h for h in handles}
        if root not in self._handles:
            raise MulticopyError(f"root {root} not among the given nodes")
        if self._handles[root].kind != ROOT_BUFFER:
            raise MulticopyError("root node must be a root buffer")
        self._root = root
        self._locks: dict[NodeId, threading.Lock] = {
            i: threading.Lock() for i in self._handles
        }
        self._succ_reach: dict[NodeId, dict[Key, TimedValue]] = {
            i: dict((succ_reach or {}).get(i, {})) for i in self._handles
        }
        self._clock = clock
        self.history = history if history is not None else UpsertHistory(keyspace_size)
        # Maintenance hook: runs (lock-free) after a failed root append.
        self._on_root_full: Optional[Callable[[], None]] = (
            self.maintenance_pass if flush_on_full else None
        )
        self._held = threading.local()
        self.lock_order_violations: list[dict] = []
        self._viol_lock = threading.Lock()

    # --- locking with order instrumentation --------------------------------

    def _held_list(self) -> list[NodeId]:
        lst = getattr(self._held, "nodes", None)
        if lst is None:
            lst = []
            self._held.nodes = lst
        return lst

    def _acquire(self, nid: NodeId) -> None:
        held = self._held_list()
        if held:
            # Only compaction holds two locks, and only parent then child.
            bad = None
            if len(held) >= 2:
                bad = "more than two locks"
            elif nid not in self._handles[held[-1]].succ_edgesets:
                bad = "second lock is not a successor of the first"
            if bad is not None:
                with self._viol_lock:
                    self.lock_order_violations.append(
                        {
                            "thread": threading.current_thread().name,
                            "held": list(held),
                            "acquiring": nid,
                            "reason": bad,
                        }
                    )
        self._locks[nid].acquire()
        held.append(nid)

    def _release(self, nid: NodeId) -> None:
        self._held_list().remove(nid)
        self._locks[nid].release()

    # --- public metadata ----------------------------------------------------

    @property
    def root_id(self) -> NodeId:
        return self._root

    @property
    def clock(self) -> Timestamp:
        return self._clock

    def node_ids(self) -> list[NodeId]:
        return sorted(self._handles)

    def handle(self, nid: NodeId) -> NodeHandle:
        return self._handles[nid]

    # --- operations -----------------------------------------------------------

    def search_timed(self, key: Key) -> SearchProbe:
        """Traverse from the root; returns the first copy found, or the
        implicit (tombstone, 0) if the walk falls off the structure."""
        check_key(key, self.keyspace_size)
        snap = self.history.snapshot()
        nid = self._root
        while True:
            self._acquire(nid)
            try:
                h = self._handles[nid]
                tv = h.in_contents(key)
                nxt = None if tv is not None else h.find_next(key)
            finally:
                self._release(nid)
            if tv is not None:
                return SearchProbe(tv.value, tv.ts, snap)
            if nxt is None:
                return SearchProbe(TOMBSTONE, 0, snap)
            nid = nxt

    def search(self, key: Key) -> Value:
        return self.search_timed(key).value

    def upsert_timed(self, key: Key, value: Value) -> Timestamp:
        """Write a fresh copy at the root; returns the timestamp it got.

        Retries for as long as the root is full of other keys; each failed
        round hands control to the maintenance hook (or naps briefly) so a
        flusher can make room.
        """
        check_key(key, self.keyspace_size)
        while True:
            self._acquire(self._root)
            try:
                t = self._clock
                if self._handles[self._root].add_contents(key, value, t):
                    # Same critical section as the append: the write becomes
                    # logically current the instant the lock is released.
                    self.history.record_upsert(key, value, t)
                    self._clock = t + 1
                    return t
            finally:
                self._release(self._root)
            if self._on_root_full is not None:
                self._on_root_full()
            else:
                time.sleep(1e-4)

    def upsert(self, key: Key, value: Value) -> None:
        self.upsert_timed(key, value)

    def delete(self, key: Key) -> None:
        self.upsert_timed(key, TOMBSTONE)

    def set_on_root_full(self, hook: Optional[Callable[[], None]]) -> None:
        self._on_root_full = hook

    def maintenance_pass(self) -> None:
        raise NotImplementedError

    # --- compaction -------------------------------------------------------------

    def compact(
        self,
        node_id: Optional[NodeId] = None,
        *,
        chooser: Optional[Callable[[NodeHandle], Optional[NodeId]]] = None,
        new_edge_keys: Optional[Callable[[NodeHandle], frozenset[Key]]] = None,
    ) -> None:
        """Push records down from a full node, cascading while targets fill.

        chooser overrides the default most-coverage successor policy (it may
        return None to force a fresh sink); new_edge_keys overrides the
        edgeset granted to a fresh sink, which defaults to all keys the node
        does not already route somewhere.
        """
        nid = self._root if node_id is None else node_id
        while True:
            self._acquire(nid)
            m_id = None
            try:
                n = self._handles[nid]
                if not n.at_capacity():
                    return
                m_id = chooser(n) if chooser is not None else n.choose_next()
                if m_id is None:
                    cap = None if n.capacity is None else n.capacity * self.growth_factor
                    m = alloc_node(cap)
                    self._register(m)
                    ks = (
                        new_edge_keys(n)
                        if new_edge_keys is not None
                        else frozenset(range(self.keyspace_size)) - n.routed_keys()
                    )
                    # Linking happens under n's lock; nobody can reach m
                    # before this edge exists, so its lock cannot block.
                    insert_node(n, m, ks)
                    m_id = m.id
                else:
                    m = self._handles[m_id]
                self._acquire(m_id)
                moved = merge_contents(n, m)
                if moved:
                    landed = m.contents()
                    view = self._succ_reach[nid]
                    for k in moved:
                        view[k] = landed[k]
            finally:
                # Parent before child, on every exit path.
                held = self._held_list()
                if nid in held:
                    self._release(nid)
                if m_id is not None and m_id in held:
                    self._release(m_id)
            nid = m_id

    def _register(self, m: NodeHandle) -> None:
        # Plain dict stores: assignment is atomic and ids are never reused,
        # so concurrent readers either see the node fully or not at all.
        self._locks[m.id] = threading.Lock()
        self._succ_reach[m.id] = {}
        self._handles[m.id] = m

    # --- snapshots ----------------------------------------------------------------

    def snapshot_graph(self) -> MulticopyGraph:
        """Deep-copy the node graph for offline analysis.

        Only meaningful at quiescence (no operation in flight); the stress
        harness pauses its workers before calling this.
        """
        g = MulticopyGraph(
            keyspace_size=self.keyspace_size,
            root=self._root,
            nodes=set(self._handles),
        )
        for nid, h in self._handles.items():
            g.contents[nid] = h.contents()
            if h.succ_edgesets:
                g.edgesets[nid] = dict(h.succ_edgesets)
            g.succ_reach[nid] = dict(self._succ_reach[nid])
        return g


class LsmStructure(MulticopyStructure):
    """Log-structured instance: in-memory root buffer, sorted-table tail.

    Starts as a lone root; flushing a full root grows the first table, and
    each cascade step can grow the next, capacities scaling by
    growth_factor. The shape stays a list because fresh sinks take over all
    unrouted keys.
    """

    @classmethod
    def create(
        cls,
        keyspace_size: int,
        root_capacity: int,
        growth_factor: int = 2,
        *,
        flush_on_full: bool = True,
    ) -> "LsmStructure":
        root = NodeHandle(fresh_node_id(), ROOT_BUFFER, root_capacity)
        return cls(
            keyspace_size,
            root.id,
            [root],
            growth_factor=growth_factor,
            flush_on_full=flush_on_full,
        )

    def flush_root(self) -> None:
        """Compact starting at the root; no-op while the root has room."""
        self.compact(self._root)

    def maintenance_pass(self) -> None:
        self.flush_root()
