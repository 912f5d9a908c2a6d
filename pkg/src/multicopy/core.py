"""Shared domain types for multicopy search structures.

A multicopy structure may hold several timestamped copies of the same key at
once; only the copy with the highest timestamp is logically current. Deletes
are upserts of a distinguished tombstone, so "absent" and "deleted" look the
same to a search. These types are deliberately tiny: keys are ints drawn from
a bounded keyspace fixed at construction time, values are ints or the
tombstone, timestamps are positive ints handed out by a per-structure clock
(timestamp 0 is reserved for the implicit initial tombstone of every key).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union


class MulticopyError(Exception):
    """Base class for errors raised by this package."""


class StructuralError(MulticopyError):
    """The node graph is malformed (e.g. a cycle where a DAG is required)."""


class EdgesetDisjointnessError(StructuralError):
    """Two outgoing edges of the same node claim the same key."""


class HistoryCorruptionError(MulticopyError):
    """The upsert history violates its append-only, clock-ordered contract."""


class _Tombstone:
    """Singleton marker for deleted / never-written keys."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "<tombstone>"


TOMBSTONE = _Tombstone()

Key = int
Timestamp = int
Value = Union[int, _Tombstone]


@dataclass(frozen=True)
class TimedValue:
    """A value copy tagged with the logical time of the upsert that wrote it.

    Copies are ordered by timestamp alone; the value carries no order. Code
    that needs "the newer copy" must compare .ts explicitly, which is why this
    class defines no comparison operators.
    """

    value: Value
    ts: Timestamp

    def __repr__(self) -> str:
        return f"({self.value!r}@{self.ts})"


# The initial state of every key: deleted at time zero.
INITIAL = TimedValue(TOMBSTONE, 0)

# Contents of a single node: at most one copy per key.
NodeContents = dict[Key, TimedValue]


def is_tombstone(v: Value) -> bool:
    return v is TOMBSTONE


def val_projection(contents: NodeContents) -> dict[Key, Value]:
    """Drop timestamps, keeping the per-key values.

    Lossy by design: two contents maps that differ only in timestamps project
    to the same map.
    """
    return {k: tv.value for k, tv in contents.items()}


def check_key(key: Key, keyspace_size: int) -> None:
    """Reject keys outside the keyspace the structure was built for."""
    if not isinstance(key, int) or isinstance(key, bool):
        raise MulticopyError(f"key must be an int, got {key!r}")
    if not 0 <= key < keyspace_size:
        raise MulticopyError(
            f"key {key} outside keyspace [0, {keyspace_size})"
        )
