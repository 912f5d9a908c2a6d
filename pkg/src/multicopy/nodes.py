"""Node backends: the two concrete layouts a structure's nodes can use.

A RootBuffer is the writable in-memory node: an unsorted array that grows at
one end, with at most one live record per key. Overwrites leave the old slot
dead; dead slots get squeezed out in place when an append would overflow the
array but the live count still fits. Capacity bounds live records, so an
overwrite never fails even at a full root.

A SortedTable is everything else: records sorted by key, binary searched,
never touched outside a merge (both participants locked by the caller).

The move between nodes is merge_contents: pick the source's live keys that
the connecting edge owns, in key order, as long as the target keeps fitting
(a key the target already holds is an overwrite and costs no slot), then move
those records. The source side forgets exactly the moved keys and the target
adopts the source's copies, so the newest copy of every key among the two
nodes is preserved.
"""

from __future__ import annotations

import itertools
from bisect import bisect_left, insort
from typing import Literal, Optional

from .core import (
    EdgesetDisjointnessError,
    Key,
    MulticopyError,
    NodeContents,
    TimedValue,
    Timestamp,
    Value,
)

NodeId = int
ROOT_BUFFER: Literal["root_buffer"] = "root_buffer"
SORTED_TABLE: Literal["sorted_table"] = "sorted_table"

_fresh_ids = itertools.count()


def fresh_node_id() -> NodeId:
    return next(_fresh_ids)


class NodeHandle:
    """One node: its records, capacity, and outgoing edgesets.

    Thread safety is the caller's problem; the templates guard every handle
    with a per-node lock.
    """

    def __init__(
        self,
        node_id: NodeId,
        kind: str,
        capacity: Optional[int],
        entries: Optional[NodeContents] = None,
    ):
        if kind not in (ROOT_BUFFER, SORTED_TABLE):
            raise MulticopyError(f"unknown node kind {kind!r}")
        if capacity is not None and capacity < 1:
            raise MulticopyError("capacity must be positive or None (unbounded)")
        self.id = node_id
        self.kind = kind
        self.capacity = capacity
        self.succ_edgesets: dict[NodeId, frozenset[Key]] = {}
        if kind == ROOT_BUFFER:
            self._slots: list[tuple[Key, TimedValue]] = []
            self._live: dict[Key, int] = {}
        else:
            self._keys: list[Key] = []
            self._tvs: list[TimedValue] = []
        for k, tv in sorted((entries or {}).items()):
            self._force_set(k, tv)

    # --- record access ---------------------------------------------------

    def in_contents(self, key: Key) -> Optional[TimedValue]:
        """The node's own copy of key, None if it holds none."""
        if self.kind == ROOT_BUFFER:
            i = self._live.get(key)
            return self._slots[i][1] if i is not None else None
        i = self._table_index(key)
        return self._tvs[i] if i is not None else None

    def find_next(self, key: Key) -> Optional[NodeId]:
        """Successor to continue a traversal at, None at the end of the line.

        Outgoing edgesets must be disjoint; two claimants is corruption.
        """
        found = None
        for m, ks in self.succ_edgesets.items():
            if key in ks:
                if found is not None:
                    raise EdgesetDisjointnessError(
                        f"key {key} claimed by edges {self.id}->{found} "
                        f"and {self.id}->{m}"
                    )
                found = m
        return found

    def live_count(self) -> int:
        if self.kind == ROOT_BUFFER:
            return len(self._live)
        return len(self._keys)

    def live_keys(self) -> list[Key]:
        if self.kind == ROOT_BUFFER:
            return sorted(self._live)
        return list(self._keys)

    def contents(self) -> NodeContents:
        """Copy of the live records."""
        if self.kind == ROOT_BUFFER:
            return {k: self._slots[i][1] for k, i in self._live.items()}
        return dict(zip(self._keys, self._tvs))

    def at_capacity(self) -> bool:
        return self.capacity is not None and self.live_count() >= self.capacity

    # --- writes ------------------------------------------------------------

    def add_contents(self, key: Key, value: Value, ts: Timestamp) -> bool:
        """Append a fresh copy; False when a full node would need a new slot.

        Only the RootBuffer accepts writes; tables change through merges.
        """
        if self.kind != ROOT_BUFFER:
            raise MulticopyError("add_contents requires a root buffer node")
        if key in self._live:
            # Overwrite: retire the old slot, then append as usual.
            del self._live[key]
        elif self.capacity is not None and len(self._live) >= self.capacity:
            return False
        if self.capacity is not None and len(self._slots) >= self.capacity:
            self._squeeze()
        self._slots.append((key, TimedValue(value, ts)))
        self._live[key] = len(self._slots) - 1
        return True

    def _squeeze(self) -> None:
        # Drop dead slots, preserving insertion order of the live ones.
        live_idx = sorted(self._live.values())
        self._slots = [self._slots[i] for i in live_idx]
        self._live = {k: j for j, (k, _) in enumerate(self._slots)}

    def _force_set(self, key: Key, tv: TimedValue) -> None:
        # Used by construction and merges; bypasses the capacity gate, the
        # caller is responsible for having counted slots.
        if self.kind == ROOT_BUFFER:
            if key in self._live:
                del self._live[key]
            self._slots.append((key, tv))
            self._live[key] = len(self._slots) - 1
        else:
            i = self._table_index(key)
            if i is not None:
                self._tvs[i] = tv
            else:
                j = bisect_left(self._keys, key)
                self._keys.insert(j, key)
                self._tvs.insert(j, tv)

    def _remove(self, key: Key) -> None:
        if self.kind == ROOT_BUFFER:
            del self._live[key]
        else:
            i = self._table_index(key)
            if i is None:
                raise MulticopyError(f"node {self.id} holds no record for key {key}")
            del self._keys[i]
            del self._tvs[i]

    def _table_index(self, key: Key) -> Optional[int]:
        i = bisect_left(self._keys, key)
        if i < len(self._keys) and self._keys[i] == key:
            return i
        return None

    # --- compaction policy ---------------------------------------------------

    def choose_next(self) -> Optional[NodeId]:
        """Successor to merge into: the one whose edgeset covers the most
        live keys, ties broken by smaller id. None when no edgeset touches
        any live key, i.e. a new node is needed."""
        live = set(self.live_keys())
        best: Optional[tuple[int, NodeId]] = None
        for m, ks in self.succ_edgesets.items():
            cov = len(live & ks)
            if cov == 0:
                continue
            if best is None or (-cov, m) < best:
                best = (-cov, m)
        return best[1] if best else None

    def routed_keys(self) -> frozenset[Key]:
        out: frozenset[Key] = frozenset()
        for ks in self.succ_edgesets.values():
            out |= ks
        return out

    def __repr__(self) -> str:
        return (
            f"NodeHandle(id={self.id}, kind={self.kind}, "
            f"live={self.live_count()}, cap={self.capacity})"
        )


def alloc_node(capacity: Optional[int]) -> NodeHandle:
    """Fresh, empty, unlinked sorted table with a process-unique id."""
    return NodeHandle(fresh_node_id(), SORTED_TABLE, capacity)


def insert_node(n: NodeHandle, m: NodeHandle, keys: frozenset[Key]) -> None:
    """Link m under n, giving the new edge the given edgeset.

    The edgeset must be nonempty and stay disjoint from n's existing edges,
    otherwise traversal routing would become ambiguous.
    """
    if not keys:
        raise MulticopyError("new edge needs a nonempty edgeset")
    if m.id in n.succ_edgesets:
        raise MulticopyError(f"node {m.id} is already a successor of {n.id}")
    clash = keys & n.routed_keys()
    if clash:
        raise EdgesetDisjointnessError(
            f"keys {sorted(clash)} already routed by node {n.id}"
        )
    n.succ_edgesets[m.id] = frozenset(keys)


def merge_contents(n: NodeHandle, m: NodeHandle) -> set[Key]:
    """Move records down the edge n->m; returns the set of moved keys.

    Candidates are n's live keys owned by the edge, taken in key order while
    m has room (overwrites are free). Power cut here is impossible, this is
    memory, so the move is remove-then-set per key under the caller's locks.
    """
    if m.kind != SORTED_TABLE:
        raise MulticopyError("merge target must be a sorted table")
    es = n.succ_edgesets.get(m.id)
    if es is None:
        raise MulticopyError(f"no edge {n.id}->{m.id} to merge along")
    src = n.contents()
    room = None if m.capacity is None else m.capacity - m.live_count()
    moved: set[Key] = set()
    for k in sorted(src.keys() & es):
        cost = 0 if m.in_contents(k) is not None else 1
        if room is not None:
            if cost > room:
                continue
            room -= cost
        n._remove(k)
        m._force_set(k, src[k])
        moved.add(k)
    return moved
