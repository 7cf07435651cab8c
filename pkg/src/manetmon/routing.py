"""Next-hop selection for rescue traffic.

Three strategies live here: blind random-walk forwarding (the gossip route
that hunts for an out-of-range parent), relay-set fallback target selection,
and an idealized link-state comparator that picks the first hop of a
shortest path over a periodically refreshed global topology snapshot.

All choice functions are pure given their inputs; the walk's bookkeeping
(visited nodes, hop budget) travels in :class:`RoutePacketMeta`, which is
simulator-side metadata and never appears on the wire.
"""
from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

from .wire import Address


@dataclass(frozen=True)
class RoutePacketMeta:
    """Walk bookkeeping carried alongside a routed packet.

    ``path`` is the ordered list of nodes the packet has traversed, origin
    first; the visited set and hop count derive from it.  ``fixed_path``,
    when non-empty, pins the remaining hops (used to ride an acknowledgment
    back along the reverse of a rescue path).
    """

    path: tuple[Address, ...]
    max_hops: int
    fixed_path: tuple[Address, ...] = ()

    def __post_init__(self) -> None:
        if self.max_hops <= 0:
            raise ValueError("max_hops must be positive")
        if not self.path:
            raise ValueError("path starts at the originator")

    @property
    def visited(self) -> frozenset[Address]:
        return frozenset(self.path)

    @property
    def hops(self) -> int:
        return len(self.path) - 1

    def advanced(self, via: Address) -> "RoutePacketMeta":
        """Meta for the next emission, after this node relays the packet."""
        fixed = self.fixed_path[1:] if self.fixed_path else ()
        return RoutePacketMeta(self.path + (via,), self.max_hops, fixed)


def gossip_next_hop(
    neighbors: Iterable[Address], meta: RoutePacketMeta, rng: random.Random
) -> Address | None:
    """Pick the walk's next carrier uniformly at random.

    Unvisited neighbors are preferred; once all neighbors have been visited
    the walk may revisit rather than stall.  Returns None (no forwarder) when
    there are no neighbors at all or the hop budget is spent.
    """
    pool = sorted(set(neighbors))
    if not pool or meta.hops >= meta.max_hops:
        return None
    fresh = [a for a in pool if a not in meta.visited]
    return rng.choice(fresh or pool)


def choose_forward_target(
    relay_set: Iterable[Address], already_tried: Iterable[Address]
) -> Address | None:
    """First fallback target not yet tried, nearest ancestor first.

    Returns None when the relay set is exhausted.
    """
    tried = set(already_tried)
    for target in relay_set:
        if target not in tried:
            return target
    return None


@dataclass(frozen=True)
class TopologySnapshot:
    """Symmetric, irreflexive adjacency over addresses at one instant."""

    adjacency: dict[Address, frozenset[Address]] = field(default_factory=dict)

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[Address, Address]]) -> "TopologySnapshot":
        adj: dict[Address, set[Address]] = {}
        for a, b in edges:
            if a == b:
                continue
            adj.setdefault(a, set()).add(b)
            adj.setdefault(b, set()).add(a)
        return cls({node: frozenset(peers) for node, peers in adj.items()})

    def neighbors(self, node: Address) -> frozenset[Address]:
        return self.adjacency.get(node, frozenset())


def snapshot_shortest_path_next_hop(
    topo: TopologySnapshot, origin: Address, target: Address
) -> Address | None:
    """First hop of a minimum-hop path from origin to target in the snapshot.

    Ties between equally short first hops break toward the smallest address.
    Returns None (no route) when the target is unreachable.
    """
    if origin == target:
        raise ValueError("origin and target must differ")
    dist = _bfs_distances(topo, target)
    here = dist.get(origin)
    if here is None:
        return None
    for hop in sorted(topo.neighbors(origin)):
        if dist.get(hop) == here - 1:
            return hop
    return None  # pragma: no cover - unreachable when origin has a distance


def _bfs_distances(topo: TopologySnapshot, start: Address) -> dict[Address, int]:
    dist = {start: 0}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        for peer in sorted(topo.neighbors(node)):
            if peer not in dist:
                dist[peer] = dist[node] + 1
                queue.append(peer)
    return dist
