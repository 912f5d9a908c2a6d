"""Offline verification: snapshot invariants and trace linearizability.

check_invariants runs every structural, history and flow condition against
one quiescent snapshot and reports them all, pass or fail, each failure with
a concrete witness. Where a property has two independent formulations (the
recursive reach versus the per-node local view backed by flows, or the
set-propagated inset versus the inset flow's support), both are computed and
compared; agreement is a check in its own right, so a bug in either side
shows up instead of hiding.

linearize reconstructs a sequential order for a concurrent trace. Upserts go
in timestamp order, which is their commit order. A search that returned the
newest copy known at its invocation sits at its invocation point (after the
upserts its history snapshot had seen); a search that was overtaken by a
newer upsert sits immediately after the upsert whose timestamp it returned.
The candidate order is then validated from scratch: it must embed the
real-time precedence of the trace, and replaying it through a plain map must
reproduce every returned value. Failures carry the first offending event.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Optional

from .core import INITIAL, TOMBSTONE, Timestamp
from .graph import (
    MulticopyGraph,
    compute_flow,
    flow_residuals,
    inset_map,
    local_reach,
    reach_maps,
    structural_issues,
)
from .history import SearchEvent, Trace, TraceEvent, UpsertEvent, UpsertHistory

WITNESS_CAP = 20


@dataclass
class CheckResult:
    check_id: str
    label: str
    passed: bool
    witnesses: list[dict] = field(default_factory=list)
    skipped: bool = False

    @property
    def ok(self) -> bool:
        return self.passed or self.skipped

    def to_json(self) -> dict:
        return {
            "check": self.check_id,
            "label": self.label,
            "passed": self.passed,
            "skipped": self.skipped,
            "witnesses": self.witnesses,
        }


@dataclass
class InvariantReport:
    entries: list[CheckResult] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(e.ok for e in self.entries)

    def failures(self) -> list[CheckResult]:
        return [e for e in self.entries if not e.ok]

    def entry(self, check_id: str) -> CheckResult:
        for e in self.entries:
            if e.check_id == check_id:
                return e
        raise KeyError(check_id)

    def to_json(self) -> dict:
        return {"ok": self.ok, "checks": [e.to_json() for e in self.entries]}

    def format_text(self) -> str:
        lines = []
        for e in self.entries:
            status = "SKIP" if e.skipped else ("PASS" if e.passed else "FAIL")
            lines.append(f"[{status}] {e.check_id}: {e.label}")
            for w in e.witnesses[:3]:
                lines.append(f"         witness: {w}")
        lines.append("result: " + ("OK" if self.ok else "INVARIANT VIOLATIONS FOUND"))
        return "\n".join(lines)


def _enc(v):
    return None if v is TOMBSTONE else v


def _cap(ws: list[dict]) -> list[dict]:
    return ws[:WITNESS_CAP]


def check_invariants(
    g: MulticopyGraph, h: UpsertHistory, clock: Timestamp
) -> InvariantReport:
    """Full single-snapshot suite. Requires that g, h and clock were taken
    together at quiescence; nothing here locks anything."""
    report = InvariantReport()
    add = report.entries.append

    issues = structural_issues(g)
    cyclic = any(i["kind"] == "cycle" for i in issues)
    add(
        CheckResult(
            "acyclic",
            "node graph is a DAG",
            passed=not cyclic,
            witnesses=[i for i in issues if i["kind"] == "cycle"],
        )
    )
    overlap = [i for i in issues if i["kind"] == "edgeset_overlap"]
    add(
        CheckResult(
            "edgesets_disjoint",
            "outgoing edgesets of each node are pairwise disjoint",
            passed=not overlap,
            witnesses=_cap(overlap),
        )
    )
    other = [
        i for i in issues if i["kind"] not in ("cycle", "edgeset_overlap")
    ]
    add(
        CheckResult(
            "endpoints_valid",
            "root and edge endpoints are nodes of the graph",
            passed=not other,
            witnesses=_cap(other),
        )
    )

    if cyclic or other:
        skip_ids = [
            ("inv1_logical_matches_reach", "history max-ts map equals reach of root"),
            ("inv3_contents_in_history", "every stored copy appears in the history"),
            ("inv4_ts_below_clock", "every logged timestamp is below the clock"),
            ("inv6_downstream_older", "copies get older when moving down an edge"),
            ("inv7_reach_within_inset", "reachable keys of a node lie in its inset"),
            ("inv8_pred_insets_disjoint", "shared edge keys are in at most one predecessor inset"),
            ("flow_local_edges", "recorded handed-down keys are routed by some edge"),
            ("flow_reach_agree", "incoming copy flow matches the local reach view"),
            ("flow_time_order", "handed-down copy is never newer than the local view"),
            ("flow_inset_cover", "locally visible keys are covered by the inset flow"),
            ("flow_inset_unique", "inset flow multiplicity is at most one"),
            ("floweqn_cir_residual", "copy flow satisfies its flow equation"),
            ("floweqn_inset_residual", "inset flow satisfies its flow equation"),
            ("inset_flow_matches_inset", "inset flow support equals set-propagated insets"),
            ("local_vs_recursive_reach", "local reach view equals recursive reach"),
        ]
        for cid, label in skip_ids:
            add(
                CheckResult(
                    cid,
                    label,
                    passed=False,
                    witnesses=[{"not_evaluated": "structure checks failed"}],
                    skipped=False,
                )
            )
        return report

    reach = reach_maps(g)
    insets = inset_map(g)
    cir_flow = compute_flow(g, "cir")
    inset_flow = compute_flow(g, "inset")
    root_reach = reach[g.root]

    # Inv1: the logical map told by the history equals the root's reach.
    ws = []
    for k in range(g.keyspace_size):
        logical = h.max_ts(k)
        reached = root_reach.get(k, INITIAL)
        if logical != reached:
            ws.append(
                {
                    "key": k,
                    "history": [_enc(logical.value), logical.ts],
                    "reach": [_enc(reached.value), reached.ts],
                }
            )
    add(
        CheckResult(
            "inv1_logical_matches_reach",
            "history max-ts map equals reach of root",
            passed=not ws,
            witnesses=_cap(ws),
        )
    )

    # Inv3: no node invents copies that were never upserted.
    ws = []
    for n in sorted(g.nodes):
        for k, tv in sorted(g.node_contents(n).items()):
            if not h.contains(k, tv.value, tv.ts):
                ws.append({"node": n, "key": k, "copy": [_enc(tv.value), tv.ts]})
    add(
        CheckResult(
            "inv3_contents_in_history",
            "every stored copy appears in the history",
            passed=not ws,
            witnesses=_cap(ws),
        )
    )

    # Inv4: the clock is ahead of everything logged.
    ws = [
        {"ts": t, "key": k, "clock": clock}
        for k, v, t in h.entries()
        if t >= clock
    ]
    add(
        CheckResult(
            "inv4_ts_below_clock",
            "every logged timestamp is below the clock",
            passed=not ws,
            witnesses=_cap(ws),
        )
    )

    # Inv6: along an edge owning k, the downstream reach is not newer than
    # the upstream copy. This is what makes the first copy found correct.
    ws = []
    for n, m, ks in sorted(g.edges()):
        cn = g.node_contents(n)
        for k in sorted(ks):
            if k in cn:
                below = reach[m].get(k, INITIAL)
                if below.ts > cn[k].ts:
                    ws.append(
                        {
                            "node": n,
                            "succ": m,
                            "key": k,
                            "upstream_ts": cn[k].ts,
                            "downstream_ts": below.ts,
                        }
                    )
    add(
        CheckResult(
            "inv6_downstream_older",
            "copies get older when moving down an edge",
            passed=not ws,
            witnesses=_cap(ws),
        )
    )

    # Inv7: a node only has reachable copies for keys that can arrive there.
    ws = []
    for n in sorted(g.nodes):
        extra = set(reach[n]) - insets[n]
        for k in sorted(extra):
            ws.append({"node": n, "key": k})
    add(
        CheckResult(
            "inv7_reach_within_inset",
            "reachable keys of a node lie in its inset",
            passed=not ws,
            witnesses=_cap(ws),
        )
    )

    # Inv8: when two edges into the same node own the same key, at most one
    # of the two sources can actually be reached with that key.
    preds: dict[int, list[int]] = {n: [] for n in g.nodes}
    for n, m, _ in g.edges():
        preds[m].append(n)
    ws = []
    for m in sorted(g.nodes):
        ps = sorted(preds[m])
        for i in range(len(ps)):
            for j in range(i + 1, len(ps)):
                a, b = ps[i], ps[j]
                common = g.edgesets[a][m] & g.edgesets[b][m]
                bad = common & insets[a] & insets[b]
                for k in sorted(bad):
                    ws.append({"node": m, "pred_a": a, "pred_b": b, "key": k})
    add(
        CheckResult(
            "inv8_pred_insets_disjoint",
            "shared edge keys are in at most one predecessor inset",
            passed=not ws,
            witnesses=_cap(ws),
        )
    )

    # Flow condition 1: every recorded handed-down key has an outgoing edge.
    ws = []
    for n in sorted(g.nodes):
        routed = frozenset()
        for ks in g.successors(n).values():
            routed |= ks
        for k in sorted(set(g.node_succ_reach(n)) - routed):
            ws.append({"node": n, "key": k})
    phi1 = CheckResult(
        "flow_local_edges",
        "recorded handed-down keys are routed by some edge",
        passed=not ws,
        witnesses=_cap(ws),
    )
    add(phi1)

    # Flow condition 2: whatever copy flows into n, n's local view agrees.
    ws = []
    local = {n: local_reach(g, n) for n in g.nodes}
    for n in sorted(g.nodes):
        for (k, tv), cnt in sorted(
            cir_flow[n].items(), key=lambda it: (it[0][0], it[0][1].ts)
        ):
            if cnt > 0 and local[n].get(k) != tv:
                got = local[n].get(k)
                ws.append(
                    {
                        "node": n,
                        "key": k,
                        "flowed": [_enc(tv.value), tv.ts],
                        "local": None if got is None else [_enc(got.value), got.ts],
                    }
                )
    phi2 = CheckResult(
        "flow_reach_agree",
        "incoming copy flow matches the local reach view",
        passed=not ws,
        witnesses=_cap(ws),
    )
    add(phi2)

    # Flow condition 3: handing a copy down never advances its time.
    ws = []
    for n in sorted(g.nodes):
        sr = g.node_succ_reach(n)
        for k, tv in sorted(sr.items()):
            mine = local[n].get(k, INITIAL)
            if tv.ts > mine.ts:
                ws.append(
                    {"node": n, "key": k, "recorded_ts": tv.ts, "local_ts": mine.ts}
                )
    add(
        CheckResult(
            "flow_time_order",
            "handed-down copy is never newer than the local view",
            passed=not ws,
            witnesses=_cap(ws),
        )
    )

    # Flow condition 4: keys a node can see must be able to arrive there.
    ws = []
    for n in sorted(g.nodes):
        for k in sorted(local[n]):
            if inset_flow[n].get(k, 0) <= 0:
                ws.append({"node": n, "key": k})
    add(
        CheckResult(
            "flow_inset_cover",
            "locally visible keys are covered by the inset flow",
            passed=not ws,
            witnesses=_cap(ws),
        )
    )

    # Flow condition 5: no key can arrive at a node along two routes.
    ws = []
    for n in sorted(g.nodes):
        for k, cnt in sorted(inset_flow[n].items()):
            if cnt > 1:
                ws.append({"node": n, "key": k, "multiplicity": cnt})
    add(
        CheckResult(
            "flow_inset_unique",
            "inset flow multiplicity is at most one",
            passed=not ws,
            witnesses=_cap(ws),
        )
    )

    # The flow equation must hold exactly for both flows.
    for kind, cid, fl in (
        ("cir", "floweqn_cir_residual", cir_flow),
        ("inset", "floweqn_inset_residual", inset_flow),
    ):
        res = flow_residuals(g, kind, fl)
        ws = [
            {"node": n, "residual": {repr(el): c for el, c in diff.items()}}
            for n, diff in sorted(res.items())
        ]
        add(
            CheckResult(
                cid,
                f"{'copy' if kind == 'cir' else 'inset'} flow satisfies its flow equation",
                passed=not ws,
                witnesses=_cap(ws),
            )
        )

    # Cross-validation: the two inset formulations must agree exactly.
    ws = []
    for n in sorted(g.nodes):
        support = frozenset(k for k, c in inset_flow[n].items() if c > 0)
        if support != insets[n]:
            ws.append(
                {
                    "node": n,
                    "flow_only": sorted(support - insets[n]),
                    "set_only": sorted(insets[n] - support),
                }
            )
    add(
        CheckResult(
            "inset_flow_matches_inset",
            "inset flow support equals set-propagated insets",
            passed=not ws,
            witnesses=_cap(ws),
        )
    )

    # Cross-validation: when conditions 1 and 2 hold everywhere, the local
    # view must equal the recursive reach at every node, not just the root.
    if phi1.passed and phi2.passed:
        ws = []
        for n in sorted(g.nodes):
            if local[n] != reach[n]:
                diff_keys = sorted(
                    k
                    for k in set(local[n]) | set(reach[n])
                    if local[n].get(k) != reach[n].get(k)
                )
                ws.append({"node": n, "keys": diff_keys[:10]})
        add(
            CheckResult(
                "local_vs_recursive_reach",
                "local reach view equals recursive reach",
                passed=not ws,
                witnesses=_cap(ws),
            )
        )
    else:
        add(
            CheckResult(
                "local_vs_recursive_reach",
                "local reach view equals recursive reach",
                passed=False,
                witnesses=[{"not_evaluated": "flow conditions 1/2 already failed"}],
                skipped=True,
            )
        )

    return report


def check_inv2_monotone(prev: MulticopyGraph, nxt: MulticopyGraph) -> CheckResult:
    """Across two snapshots of the same structure, the reach of every node
    present in both may only move forward in time, per key."""
    reach_prev = reach_maps(prev)
    reach_next = reach_maps(nxt)
    ws = []
    for n in sorted(prev.nodes & nxt.nodes):
        keyspace = max(prev.keyspace_size, nxt.keyspace_size)
        for k in range(keyspace):
            before = reach_prev.get(n, {}).get(k, INITIAL)
            after = reach_next.get(n, {}).get(k, INITIAL)
            if after.ts < before.ts:
                ws.append(
                    {
                        "node": n,
                        "key": k,
                        "before_ts": before.ts,
                        "after_ts": after.ts,
                    }
                )
    return CheckResult(
        "inv2_reach_monotone",
        "per-node reach timestamps never move backwards",
        passed=not ws,
        witnesses=_cap(ws),
    )


# --- linearizability -------------------------------------------------------


AT_INVOCATION = "at_invocation"


@dataclass
class LinearizationResult:
    ok: bool
    order: list[TraceEvent] = field(default_factory=list)
    placements: dict[TraceEvent, str] = field(default_factory=dict)
    failure: Optional[dict] = None

    def to_json(self) -> dict:
        out = {"ok": self.ok, "events": len(self.order)}
        if self.failure is not None:
            out["failure"] = self.failure
        return out


def _event_json(e: TraceEvent) -> dict:
    return e.to_json()


def linearize(trace: Trace) -> LinearizationResult:
    """Build and validate a sequential order for the trace; see module doc."""
    ups = sorted(trace.upserts(), key=lambda u: (u.ts, u.inv))
    for a, b in zip(ups, ups[1:]):
        if a.ts == b.ts:
            return LinearizationResult(
                ok=False,
                failure={
                    "kind": "duplicate_upsert_ts",
                    "ts": a.ts,
                    "events": [_event_json(a), _event_json(b)],
                },
            )
    if ups and ups[0].ts <= 0:
        return LinearizationResult(
            ok=False,
            failure={"kind": "nonpositive_upsert_ts", "event": _event_json(ups[0])},
        )
    ts_list = [u.ts for u in ups]

    placements: dict[TraceEvent, str] = {}
    gaps: list[list[SearchEvent]] = [[] for _ in range(len(ups) + 1)]
    for s in trace.searches():
        if s.tp <= s.t0:
            anchor = s.snap
            placements[s] = AT_INVOCATION
        else:
            anchor = s.tp
            pos_probe = bisect_right(ts_list, s.tp)
            if pos_probe == 0 or ts_list[pos_probe - 1] != s.tp:
                return LinearizationResult(
                    ok=False,
                    failure={
                        "kind": "unmatched_return_ts",
                        "event": _event_json(s),
                    },
                )
            placements[s] = f"after_ts:{s.tp}"
        gaps[bisect_right(ts_list, anchor)].append(s)

    order: list[TraceEvent] = []
    for i in range(len(ups) + 1):
        order.extend(sorted(gaps[i], key=lambda s: s.inv))
        if i < len(ups):
            order.append(ups[i])

    # Validation pass one: the order must embed real-time precedence. If an
    # operation responded before another was invoked, it must come first.
    max_inv = None
    max_inv_event = None
    for e in order:
        if max_inv is not None and e.resp < max_inv:
            return LinearizationResult(
                ok=False,
                order=order,
                placements=placements,
                failure={
                    "kind": "real_time_order",
                    "event": _event_json(e),
                    "must_follow": _event_json(max_inv_event),
                },
            )
        if max_inv is None or e.inv > max_inv:
            max_inv = e.inv
            max_inv_event = e

    # Validation pass two: the order must make sequential sense for a map.
    state: dict = {}
    for e in order:
        if isinstance(e, UpsertEvent):
            state[e.key] = e.value
        else:
            expected = state.get(e.key, TOMBSTONE)
            if expected != e.value:
                return LinearizationResult(
                    ok=False,
                    order=order,
                    placements=placements,
                    failure={
                        "kind": "value_mismatch",
                        "event": _event_json(e),
                        "expected": _enc(expected),
                    },
                )

    return LinearizationResult(ok=True, order=order, placements=placements)
