"""Shared oracles and builders for the test suite.

The oracles here stay independent of the code paths they check: the flat
fold recomputes expected verdicts directly from node metrics, connectivity
uses its own union-find, and the aggregation-tree edges are read back out of
the wire data in the trace.
"""
from __future__ import annotations

import json
import math
import random

from manetmon.mobility import Area
from manetmon.sim import ScenarioConfig, SimTrace
from manetmon.wire import MonitorFunction


def flat_fold(function: MonitorFunction, metrics: list[float]) -> tuple[float, int]:
    """Brute-force expected (outcome, observations) over all node metrics."""
    n = len(metrics)
    if function is MonitorFunction.COUNT:
        return float(n), n
    if function is MonitorFunction.SUM:
        return math.fsum(metrics), n
    if function is MonitorFunction.MIN:
        return min(metrics), n
    if function is MonitorFunction.MAX:
        return max(metrics), n
    return math.fsum(metrics) / n, n  # AVG kinds


def is_connected(points: list[tuple[float, float]], range_m: float, skip: int | None = None) -> bool:
    nodes = [i for i in range(len(points)) if i != skip]
    if not nodes:
        return True
    seen = {nodes[0]}
    stack = [nodes[0]]
    while stack:
        i = stack.pop()
        for j in nodes:
            if j in seen:
                continue
            if math.dist(points[i], points[j]) <= range_m:
                seen.add(j)
                stack.append(j)
    return len(seen) == len(nodes)


def connected_placement(
    rng: random.Random, count: int, area: Area, range_m: float = 125.0
) -> tuple[tuple[float, float], ...]:
    """Rejection-sample node positions until the disk graph is connected."""
    while True:
        pts = tuple((rng.uniform(0, area.width), rng.uniform(0, area.height)) for _ in range(count))
        if is_connected(list(pts), range_m):
            return pts


def static_config(points, function=MonitorFunction.COUNT, **kwargs) -> ScenarioConfig:
    defaults = dict(
        node_count=len(points),
        area=kwargs.pop("area", Area(1000.0, 1000.0)),
        positions=tuple(points),
        function=function,
        root_index=0,
        duration_ms=20_000,
        seed=0,
    )
    defaults.update(kwargs)
    return ScenarioConfig(**defaults)


def tree_edges(trace: SimTrace) -> dict[str, str]:
    """child address -> parent address, read from the query packets sent."""
    edges: dict[str, str] = {}
    for rec in trace.records:
        if rec.kind == "sent" and rec.ptype == "query" and rec.data:
            pkt = json.loads(rec.data)
            if pkt["source"] != pkt["parent"]:
                edges[pkt["source"]] = pkt["parent"]
    return edges


def assert_forest_rooted_at(trace: SimTrace, root: str) -> None:
    """Parent relation must be acyclic and lead every joiner to the root."""
    edges = tree_edges(trace)
    for start in edges:
        seen = {start}
        node = start
        while node in edges:
            node = edges[node]
            assert node not in seen, f"cycle through {node}"
            seen.add(node)
        assert node == root, f"{start} leads to {node}, not the root"


def query_phase_end(trace: SimTrace) -> int:
    return max(rec.time for rec in trace.records if rec.kind == "sent" and rec.ptype == "query")
