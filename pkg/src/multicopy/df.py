"""Differential-file instance: one write buffer in front of one big table.

The smallest useful multicopy shape. All writes land in the in-memory root
buffer; a flush moves every buffered record into the unbounded sorted table
behind it. The single edge owns the whole keyspace, so a search is: check
the buffer, else check the table, else report the key deleted. Since the
table is unbounded a flush always empties the buffer completely, and every
buffered copy is strictly newer than the table's copy of the same key.
"""

from __future__ import annotations

from .core import MulticopyError
from .lsm import MulticopyStructure
from .nodes import (
    NodeHandle,
    NodeId,
    ROOT_BUFFER,
    SORTED_TABLE,
    fresh_node_id,
    merge_contents,
)


class DfStructure(MulticopyStructure):
    """Two fixed nodes; searches and upserts come from the shared engine."""

    def __init__(self, *args, disk_id: NodeId, **kwargs):
        super().__init__(*args, **kwargs)
        self._disk = disk_id

    @classmethod
    def create(
        cls,
        keyspace_size: int,
        root_capacity: int,
        *,
        flush_on_full: bool = True,
    ) -> "DfStructure":
        root = NodeHandle(fresh_node_id(), ROOT_BUFFER, root_capacity)
        disk = NodeHandle(fresh_node_id(), SORTED_TABLE, capacity=None)
        root.succ_edgesets[disk.id] = frozenset(range(keyspace_size))
        return cls(
            keyspace_size,
            root.id,
            [root, disk],
            disk_id=disk.id,
            flush_on_full=flush_on_full,
        )

    @property
    def disk_id(self) -> NodeId:
        return self._disk

    def flush(self) -> None:
        """Move everything buffered at the root down to the table.

        Unlike the DAG compaction this is not gated on capacity: flushing a
        half-empty (or empty) buffer is legal and sometimes useful.
        """
        self._acquire(self._root)
        m_id = None
        try:
            n = self._handles[self._root]
            m = self._handles[self._disk]
            m_id = self._disk
            self._acquire(m_id)
            moved = merge_contents(n, m)
            if moved:
                landed = m.contents()
                view = self._succ_reach[self._root]
                for k in moved:
                    view[k] = landed[k]
        finally:
            held = self._held_list()
            if self._root in held:
                self._release(self._root)
            if m_id is not None and m_id in held:
                self._release(m_id)

    def maintenance_pass(self) -> None:
        self.flush()

    def compact(self, *args, **kwargs) -> None:
        raise MulticopyError("differential-file structure flushes; it does not compact")
