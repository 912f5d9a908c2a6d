"""Upsert history: the append-only log that defines what a search may return.

Every successful upsert appends (key, value, ts) while holding the root lock,
so the log order equals timestamp order and timestamps are dense (the entry
with timestamp t sits at index t-1). Readers never lock: they take a snapshot
by reading the published length and treat the prefix below it as a frozen
history H0. On top of the log live the two derived notions the checkers need:
max_ts (the current copy of a key, (tombstone, 0) if never written) and the
per-search recency condition "the returned copy is no older than the key's
copy at invocation time".

Traces are separate from the history: they record operation invocations and
responses (with global sequence numbers) for offline linearizability
checking, serialized one JSON object per line.
"""

from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

from .core import (
    INITIAL,
    TOMBSTONE,
    HistoryCorruptionError,
    Key,
    TimedValue,
    Timestamp,
    Value,
    check_key,
)


class UpsertHistory:
    """Append-only upsert log with lock-free prefix snapshots.

    Writers must serialize externally (the templates append under the root
    lock). Readers may call snapshot/max_ts/check_search_recency from any
    thread: appends publish by growing the log first and bumping the
    published length last, so any published prefix is fully written.
    """

    def __init__(self, keyspace_size: int):
        if keyspace_size <= 0:
            raise ValueError("keyspace_size must be positive")
        self.keyspace_size = keyspace_size
        self._log: list[tuple[Key, Value, Timestamp]] = []
        # key -> log indices of that key's entries, ascending. Maintained at
        # append time so readers only ever bisect a grow-only list.
        self._by_key: dict[Key, list[int]] = {}
        self._published = 0

    def __len__(self) -> int:
        return self._published

    def snapshot(self) -> int:
        """Current published length; index of a frozen consistent prefix."""
        return self._published

    def entries(self, upto: Optional[int] = None) -> Iterator[tuple[Key, Value, Timestamp]]:
        """Iterate the published prefix (or a shorter one)."""
        n = self._published if upto is None else min(upto, self._published)
        for i in range(n):
            yield self._log[i]

    def record_upsert(self, key: Key, value: Value, ts: Timestamp) -> None:
        """Append one upsert. Caller must hold the root lock.

        Timestamps must be strictly increasing; anything else means the clock
        discipline was broken and the history is corrupt.
        """
        check_key(key, self.keyspace_size)
        if self._log:
            last = self._log[-1][2]
            if ts <= last:
                raise HistoryCorruptionError(
                    f"upsert timestamp {ts} not above last logged {last}"
                )
        elif ts <= 0:
            raise HistoryCorruptionError(f"upsert timestamp {ts} must be >= 1")
        self._log.append((key, value, ts))
        self._by_key.setdefault(key, []).append(len(self._log) - 1)
        self._published = len(self._log)

    def max_published_ts(self) -> Timestamp:
        """Largest logged timestamp, 0 if the log is empty."""
        return self._log[self._published - 1][2] if self._published else 0

    def max_ts(self, key: Key, upto: Optional[int] = None) -> TimedValue:
        """Newest copy of key in the prefix of length `upto` (default: now).

        Falls back to the implicit (tombstone, 0) entry every key starts
        with, so the result is always defined.
        """
        check_key(key, self.keyspace_size)
        n = self._published if upto is None else min(upto, self._published)
        idxs = self._by_key.get(key)
        if idxs:
            pos = bisect_right(idxs, n - 1)
            if pos > 0:
                _, v, t = self._log[idxs[pos - 1]]
                return TimedValue(v, t)
        return INITIAL

    def contains(self, key: Key, value: Value, ts: Timestamp) -> bool:
        """Is (key, (value, ts)) in the history, counting implicit entries?"""
        if ts == 0:
            return value is TOMBSTONE and 0 <= key < self.keyspace_size
        # Dense timestamps: entry with timestamp t lives at index t-1.
        if not 1 <= ts <= self._published:
            return False
        k, v, t = self._log[ts - 1]
        return k == key and v == value and t == ts

    def logical_contents(self) -> dict[Key, Value]:
        """The map a sequential client would see: newest value per key."""
        return {
            k: self.max_ts(k).value for k in range(self.keyspace_size)
        }

    def check_search_recency(
        self, key: Key, value: Value, tp: Timestamp, snap: int
    ) -> "RecencyResult":
        """Check one search return against the history.

        `snap` is the published length at the search's invocation; `tp` the
        timestamp of the returned copy. The search is good if that copy is
        really in the history now and is at least as new as the key's copy in
        the snapshot prefix.
        """
        t0 = self.max_ts(key, upto=snap).ts
        reason = None
        if not self.contains(key, value, tp):
            reason = "returned copy not present in history"
        elif tp < t0:
            reason = f"returned ts {tp} older than invocation-time ts {t0}"
        return RecencyResult(key=key, value=value, tp=tp, snap=snap, t0=t0, reason=reason)

    def verify_predicates(self, clock: Timestamp) -> "HistoryPredicateReport":
        """Well-formedness of the whole log against the given clock value.

        init: every key has a defined newest copy (implicit tombstones make
        this structural; checked anyway). unique: one value per timestamp,
        enforced as strictly increasing log timestamps. clock: every logged
        timestamp is below the clock.
        """
        init_ok = all(
            self.max_ts(k) is not None for k in range(self.keyspace_size)
        )
        unique_ok = True
        clock_ok = True
        witness = None
        prev = 0
        for i in range(self._published):
            k, v, t = self._log[i]
            if t <= prev:
                unique_ok = False
                witness = witness or {"index": i, "ts": t, "prev_ts": prev}
            prev = t
            if t >= clock:
                clock_ok = False
                witness = witness or {"index": i, "ts": t, "clock": clock}
        return HistoryPredicateReport(
            init_ok=init_ok, unique_ok=unique_ok, clock_ok=clock_ok, witness=witness
        )


@dataclass
class RecencyResult:
    """Outcome of one online recency check; reason is None when it passed."""

    key: Key
    value: Value
    tp: Timestamp
    snap: int
    t0: Timestamp
    reason: Optional[str]

    @property
    def ok(self) -> bool:
        return self.reason is None

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "value": _encode_value(self.value),
            "tp": self.tp,
            "snap": self.snap,
            "t0": self.t0,
            "reason": self.reason,
        }


@dataclass
class HistoryPredicateReport:
    init_ok: bool
    unique_ok: bool
    clock_ok: bool
    witness: Optional[dict]

    @property
    def ok(self) -> bool:
        return self.init_ok and self.unique_ok and self.clock_ok


def _encode_value(v: Value) -> Optional[int]:
    return None if v is TOMBSTONE else v


def _decode_value(raw: Optional[int]) -> Value:
    return TOMBSTONE if raw is None else raw


@dataclass(frozen=True)
class SearchEvent:
    """One completed search: key, returned copy, and where it sat in time.

    t0 is the timestamp of the key's newest copy in the invocation-time
    prefix (length snap); tp the timestamp of the returned copy. inv/resp are
    global sequence numbers bracketing the operation in real time.
    """

    thread: int
    key: Key
    value: Value
    t0: Timestamp
    tp: Timestamp
    snap: int
    inv: int
    resp: int

    def to_json(self) -> dict:
        return {
            "op": "search",
            "thread": self.thread,
            "key": self.key,
            "value": _encode_value(self.value),
            "t0": self.t0,
            "tp": self.tp,
            "snap": self.snap,
            "inv": self.inv,
            "resp": self.resp,
        }


@dataclass(frozen=True)
class UpsertEvent:
    """One completed upsert (deletes are upserts of the tombstone)."""

    thread: int
    key: Key
    value: Value
    ts: Timestamp
    inv: int
    resp: int

    def to_json(self) -> dict:
        return {
            "op": "upsert",
            "thread": self.thread,
            "key": self.key,
            "value": _encode_value(self.value),
            "ts": self.ts,
            "inv": self.inv,
            "resp": self.resp,
        }


TraceEvent = Union[SearchEvent, UpsertEvent]


@dataclass
class Trace:
    """Real-time record of a run: all completed operations, any order.

    Sequence numbers are globally unique; sorting by inv gives invocation
    order. Serialized as JSON lines so traces stream and diff cleanly.
    """

    keyspace_size: int
    events: list[TraceEvent] = field(default_factory=list)

    def searches(self) -> list[SearchEvent]:
        return [e for e in self.events if isinstance(e, SearchEvent)]

    def upserts(self) -> list[UpsertEvent]:
        return [e for e in self.events if isinstance(e, UpsertEvent)]

    def sorted_by_invocation(self) -> list[TraceEvent]:
        return sorted(self.events, key=lambda e: e.inv)

    def dump(self, path: str) -> None:
        with open(path, "w") as f:
            f.write(json.dumps({"keyspace_size": self.keyspace_size}) + "\n")
            for e in self.sorted_by_invocation():
                f.write(json.dumps(e.to_json()) + "\n")

    @classmethod
    def load(cls, path: str) -> "Trace":
        events: list[TraceEvent] = []
        keyspace_size = None
        with open(path) as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                if "op" not in obj:
                    keyspace_size = obj["keyspace_size"]
                    continue
                events.append(event_from_json(obj))
        if keyspace_size is None:
            # Tolerate headerless traces; infer a bound from the events.
            keyspace_size = 1 + max((e.key for e in events), default=0)
        return cls(keyspace_size=keyspace_size, events=events)

    def rebuild_history(self) -> tuple[UpsertHistory, Timestamp]:
        """Reconstruct the upsert log (and clock) this trace implies.

        Upserts are replayed in timestamp order; duplicate or non-positive
        timestamps surface as HistoryCorruptionError, which is exactly what a
        tampered trace deserves.
        """
        h = UpsertHistory(self.keyspace_size)
        for e in sorted(self.upserts(), key=lambda e: e.ts):
            h.record_upsert(e.key, e.value, e.ts)
        clock = (h.max_published_ts() + 1) if len(h) else 1
        return h, clock


def event_from_json(obj: dict) -> TraceEvent:
    if obj["op"] == "search":
        return SearchEvent(
            thread=obj["thread"],
            key=obj["key"],
            value=_decode_value(obj["value"]),
            t0=obj["t0"],
            tp=obj["tp"],
            snap=obj["snap"],
            inv=obj["inv"],
            resp=obj["resp"],
        )
    if obj["op"] == "upsert":
        return UpsertEvent(
            thread=obj["thread"],
            key=obj["key"],
            value=_decode_value(obj["value"]),
            ts=obj["ts"],
            inv=obj["inv"],
            resp=obj["resp"],
        )
    raise ValueError(f"unknown trace op {obj['op']!r}")
