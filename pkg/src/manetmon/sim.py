"""Deterministic discrete-event simulator hosting the monitoring protocol.

One run places nodes in a rectangle, starts a monitoring session at the root
at t=0, and drains a single event queue ordered by (time, sequence).  The
radio is a unit disk: a broadcast reaches every node within range after a
fixed propagation delay, with optional independent per-receiver loss.  All
randomness comes from named streams derived from the run seed, so a (config,
seed) pair fully determines the trace.
"""
from __future__ import annotations

import heapq
import json
import math
import random
from dataclasses import dataclass, field
from typing import Any, Iterable

from . import metrics as metrics_mod
from . import protocol
from .mobility import Area, WalkState, WaypointState, start_walk, start_waypoint, walk_step, waypoint_step
from .protocol import (
    Action,
    AutomatonState,
    Broadcast,
    CancelTimer,
    DeliverVerdict,
    Done,
    LogError,
    NodeProtocolState,
    PacketIn,
    StartMonitoring,
    StartTimer,
    StepContext,
    TimerFired,
    step,
)
from .routing import RoutePacketMeta, TopologySnapshot, snapshot_shortest_path_next_hop
from .wire import Address, MonitorFunction, MonitoringPacket, decode_packet, encode_packet

TRACE_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """A scenario configuration violates an invariant."""


@dataclass(frozen=True)
class RadioModel:
    range_m: float = 125.0
    propagation_delay_ms: int = 1
    loss_probability: float = 0.0

    def __post_init__(self) -> None:
        if self.range_m <= 0:
            raise ConfigError("radio range must be positive")
        if self.propagation_delay_ms < 1:
            raise ConfigError("propagation delay must be at least 1 ms")
        if not 0.0 <= self.loss_probability <= 1.0:
            raise ConfigError("loss probability must lie in [0, 1]")


MOBILITY_MODELS = ("static", "waypoint", "walk")
ROUTING_BACKENDS = ("gossip", "snapshot")


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything one simulation run depends on."""

    node_count: int
    area: Area = Area(350.0, 350.0)
    mobility_model: str = "static"
    speed_mps: float = 5.0
    radio: RadioModel = RadioModel()
    function: MonitorFunction = MonitorFunction.COUNT
    timeout_ms: int = 1000
    hop_decrement_ms: int = protocol.DEFAULT_HOP_DECREMENT_MS
    retry_divisor: int = protocol.DEFAULT_RETRY_DIVISOR
    routing_backend: str = "gossip"
    snapshot_refresh_ms: int = 1000
    max_route_hops: int | None = None  # default: 3 * node_count
    root_index: int | None = None      # default: seeded random choice
    duration_ms: int = 30_000
    seed: int = 0
    mobility_tick_ms: int = 100
    name: str = "scenario"
    # Test harness knobs: pin positions, override connectivity, kill nodes.
    positions: tuple[tuple[float, float], ...] | None = None
    adjacency: tuple[tuple[int, int], ...] | None = None
    removals: tuple[tuple[int, int], ...] = ()  # (node index, time_ms)

    def validate(self) -> None:
        if self.node_count < 2:
            raise ConfigError("node_count must be at least 2")
        if self.node_count > 254:
            raise ConfigError("node_count exceeds the /24 address pool")
        if self.duration_ms <= 0:
            raise ConfigError("duration must be positive")
        if self.timeout_ms <= 0:
            raise ConfigError("timeout must be positive")
        if self.mobility_model not in MOBILITY_MODELS:
            raise ConfigError(f"unknown mobility model {self.mobility_model!r}")
        if self.routing_backend not in ROUTING_BACKENDS:
            raise ConfigError(f"unknown routing backend {self.routing_backend!r}")
        if self.mobility_model != "static" and self.speed_mps <= 0:
            raise ConfigError("speed must be positive for mobile models")
        if self.root_index is not None and not 0 <= self.root_index < self.node_count:
            raise ConfigError("root index out of range")
        if self.positions is not None and len(self.positions) != self.node_count:
            raise ConfigError("positions must cover every node")
        if self.positions is not None:
            for x, y in self.positions:
                if not self.area.contains(x, y):
                    raise ConfigError("pinned position outside the area")
        for idx, t in self.removals:
            if not 0 <= idx < self.node_count:
                raise ConfigError("removal index out of range")
            if t < 0:
                raise ConfigError("removal time must be non-negative")
        if self.adjacency is not None:
            for a, b in self.adjacency:
                if a == b or not (0 <= a < self.node_count and 0 <= b < self.node_count):
                    raise ConfigError("bad adjacency pair")

    def effective_max_route_hops(self) -> int:
        return self.max_route_hops if self.max_route_hops is not None else 3 * self.node_count

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "name": self.name,
            "node_count": self.node_count,
            "area": [self.area.width, self.area.height],
            "mobility_model": self.mobility_model,
            "speed_mps": self.speed_mps,
            "range_m": self.radio.range_m,
            "propagation_delay_ms": self.radio.propagation_delay_ms,
            "loss_probability": self.radio.loss_probability,
            "function": self.function.value,
            "timeout_ms": self.timeout_ms,
            "hop_decrement_ms": self.hop_decrement_ms,
            "retry_divisor": self.retry_divisor,
            "routing_backend": self.routing_backend,
            "snapshot_refresh_ms": self.snapshot_refresh_ms,
            "max_route_hops": self.max_route_hops,
            "root_index": self.root_index,
            "duration_ms": self.duration_ms,
            "seed": self.seed,
            "mobility_tick_ms": self.mobility_tick_ms,
        }
        if self.positions is not None:
            d["positions"] = [list(p) for p in self.positions]
        if self.adjacency is not None:
            d["adjacency"] = [list(e) for e in self.adjacency]
        if self.removals:
            d["removals"] = [list(r) for r in self.removals]
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ScenarioConfig":
        return cls(
            name=d.get("name", "scenario"),
            node_count=d["node_count"],
            area=Area(*d["area"]),
            mobility_model=d.get("mobility_model", "static"),
            speed_mps=d.get("speed_mps", 5.0),
            radio=RadioModel(
                range_m=d.get("range_m", 125.0),
                propagation_delay_ms=d.get("propagation_delay_ms", 1),
                loss_probability=d.get("loss_probability", 0.0),
            ),
            function=MonitorFunction(d.get("function", "COUNT")),
            timeout_ms=d.get("timeout_ms", 1000),
            hop_decrement_ms=d.get("hop_decrement_ms", protocol.DEFAULT_HOP_DECREMENT_MS),
            retry_divisor=d.get("retry_divisor", protocol.DEFAULT_RETRY_DIVISOR),
            routing_backend=d.get("routing_backend", "gossip"),
            snapshot_refresh_ms=d.get("snapshot_refresh_ms", 1000),
            max_route_hops=d.get("max_route_hops"),
            root_index=d.get("root_index"),
            duration_ms=d.get("duration_ms", 30_000),
            seed=d.get("seed", 0),
            mobility_tick_ms=d.get("mobility_tick_ms", 100),
            positions=tuple(tuple(p) for p in d["positions"]) if "positions" in d else None,
            adjacency=tuple(tuple(e) for e in d["adjacency"]) if "adjacency" in d else None,
            removals=tuple(tuple(r) for r in d.get("removals", ())),
        )


@dataclass(frozen=True)
class TraceRecord:
    """One timestamped observation; unset fields are omitted when serialized."""

    kind: str  # sent | delivered | dropped | state | verdict | error
    time: int
    node: str
    ptype: str | None = None
    size: int | None = None
    fanout: int | None = None
    data: str | None = None
    src: str | None = None
    dst: str | None = None
    outcome: float | None = None
    observations: int | None = None
    code: str | None = None

    def to_json(self) -> str:
        obj: dict[str, Any] = {"kind": self.kind, "time": self.time, "node": self.node}
        for name in ("ptype", "size", "fanout", "data", "src", "dst", "outcome", "observations", "code"):
            value = getattr(self, name)
            if value is not None:
                obj[name] = value
        return json.dumps(obj, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "TraceRecord":
        obj = json.loads(line)
        return cls(**obj)


@dataclass
class SimTrace:
    """Ordered record of everything a run did, plus the config that did it."""

    meta: dict[str, Any]
    records: list[TraceRecord] = field(default_factory=list)

    def to_ndjson(self) -> str:
        header = {"kind": "meta", "version": TRACE_SCHEMA_VERSION, "config": self.meta}
        lines = [json.dumps(header, separators=(",", ":"))]
        lines.extend(r.to_json() for r in self.records)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_ndjson(cls, text: str) -> "SimTrace":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty trace")
        header = json.loads(lines[0])
        if header.get("kind") != "meta":
            raise ValueError("trace does not start with a meta record")
        if header.get("version") != TRACE_SCHEMA_VERSION:
            raise ValueError(f"unsupported trace version {header.get('version')!r}")
        return cls(header["config"], [TraceRecord.from_json(ln) for ln in lines[1:]])


def node_addresses(count: int) -> tuple[Address, ...]:
    return tuple(Address(f"10.0.0.{i + 1}") for i in range(count))


@dataclass
class _SimNode:
    addr: Address
    index: int
    position: tuple[float, float]
    proto: NodeProtocolState
    mobility: WaypointState | WalkState | None = None
    alive: bool = True
    live_timers: set[int] = field(default_factory=set)


# Event kind codes; queue entries are (time, seq, code, payload).
_EV_START, _EV_DELIVER, _EV_TIMER, _EV_TICK, _EV_SNAPSHOT, _EV_REMOVE = range(6)


class Simulation:
    """One seeded run.  Build it, call :meth:`run`, read the trace."""

    def __init__(self, config: ScenarioConfig):
        config.validate()
        self.config = config
        self.trace = SimTrace(meta=config.to_dict())
        self._queue: list[tuple[int, int, int, Any]] = []
        self._seq = 0
        self._now = 0
        self._place_rng = self._stream("placement")
        self._metric_rng = self._stream("metrics")
        self._mobility_rng = self._stream("mobility")
        self._loss_rng = self._stream("loss")
        self._proto_rng = self._stream("protocol")
        self._snapshot: TopologySnapshot | None = None
        self._adjacency = (
            {frozenset(pair) for pair in config.adjacency} if config.adjacency is not None else None
        )
        self._nodes = self._build_nodes()
        self._by_addr = {n.addr: n for n in self._nodes}
        root_index = (
            config.root_index
            if config.root_index is not None
            else self._stream("root").randrange(config.node_count)
        )
        self.root = self._nodes[root_index]

    def _stream(self, label: str) -> random.Random:
        return random.Random(f"{self.config.seed}:{label}")

    def _build_nodes(self) -> list[_SimNode]:
        cfg = self.config
        addresses = node_addresses(cfg.node_count)
        if cfg.positions is not None:
            positions = [tuple(p) for p in cfg.positions]
        else:
            positions = [cfg.area.random_point(self._place_rng) for _ in addresses]
        nodes = []
        for i, addr in enumerate(addresses):
            metric = self._metric_rng.uniform(0.0, 100.0)
            proto = NodeProtocolState(self_addr=addr, metric=metric)
            mob: WaypointState | WalkState | None = None
            if cfg.mobility_model == "waypoint":
                mob = start_waypoint(positions[i], cfg.speed_mps, cfg.area, self._mobility_rng)
            elif cfg.mobility_model == "walk":
                mob = start_walk(positions[i], cfg.speed_mps, self._mobility_rng)
            nodes.append(_SimNode(addr, i, positions[i], proto, mob))
        return nodes

    # --- scheduling -----------------------------------------------------

    def _push(self, time: int, code: int, payload: Any) -> None:
        heapq.heappush(self._queue, (time, self._seq, code, payload))
        self._seq += 1

    # --- topology ---------------------------------------------------------

    def neighbors(self, node: _SimNode) -> tuple[Address, ...]:
        """Addresses currently reachable from this node, in address order."""
        if not node.alive:
            return ()
        out = []
        for other in self._nodes:
            if other is node or not other.alive:
                continue
            if self._linked(node, other):
                out.append(other.addr)
        return tuple(out)

    def _linked(self, a: _SimNode, b: _SimNode) -> bool:
        if self._adjacency is not None:
            return frozenset((a.index, b.index)) in self._adjacency
        dx = a.position[0] - b.position[0]
        dy = a.position[1] - b.position[1]
        return math.hypot(dx, dy) <= self.config.radio.range_m

    def _take_snapshot(self) -> TopologySnapshot:
        edges = []
        alive = [n for n in self._nodes if n.alive]
        for i, a in enumerate(alive):
            for b in alive[i + 1:]:
                if self._linked(a, b):
                    edges.append((a.addr, b.addr))
        return TopologySnapshot.from_edges(edges)

    # --- protocol plumbing ----------------------------------------------

    def _context_for(self, node: _SimNode) -> StepContext:
        cfg = self.config
        return StepContext(
            rng=self._proto_rng,
            neighbors=lambda: self.neighbors(node),
            hop_decrement_ms=cfg.hop_decrement_ms,
            retry_divisor=cfg.retry_divisor,
            max_route_hops=cfg.effective_max_route_hops(),
            route_backend=cfg.routing_backend,
            snapshot_next_hop=self._snapshot_next_hop if cfg.routing_backend == "snapshot" else None,
        )

    def _snapshot_next_hop(self, origin: Address, target: Address) -> Address | None:
        if self._snapshot is None:
            self._snapshot = self._take_snapshot()
        return snapshot_shortest_path_next_hop(self._snapshot, origin, target)

    def _dispatch(self, node: _SimNode, event) -> None:
        before = node.proto.automaton
        node.proto, actions = step(node.proto, event, self._context_for(node))
        after = node.proto.automaton
        if after is not before:
            self._record(
                TraceRecord("state", self._now, node.addr.value, src=before.value, dst=after.value)
            )
        self._apply(node, actions)

    def _apply(self, node: _SimNode, actions: Iterable[Action]) -> None:
        for action in actions:
            if isinstance(action, Broadcast):
                self.broadcast(node, action.packet, action.meta)
            elif isinstance(action, StartTimer):
                node.live_timers.add(action.timer_id)
                self._push(self._now + action.duration_ms, _EV_TIMER, (node, action.timer_id))
            elif isinstance(action, CancelTimer):
                node.live_timers.discard(action.timer_id)
            elif isinstance(action, DeliverVerdict):
                self._record(
                    TraceRecord(
                        "verdict",
                        self._now,
                        node.addr.value,
                        outcome=action.outcome,
                        observations=action.observations,
                    )
                )
            elif isinstance(action, LogError):
                self._record(TraceRecord("error", self._now, node.addr.value, code=action.code))
            elif isinstance(action, Done):
                pass  # completion shows up as the state change back to initial
            else:  # pragma: no cover
                raise TypeError(f"unknown action {action!r}")

    def broadcast(
        self, sender: _SimNode, packet: MonitoringPacket, meta: RoutePacketMeta | None = None
    ) -> None:
        """Emit on the shared medium: every in-range node hears one copy."""
        if not sender.alive:
            return
        wire = encode_packet(packet)
        targets = self.neighbors(sender)
        self._record(
            TraceRecord(
                "sent",
                self._now,
                sender.addr.value,
                ptype=packet.type.value,
                size=len(wire),
                fanout=len(targets),
                data=wire.decode("utf-8"),
            )
        )
        loss = self.config.radio.loss_probability
        delay = self.config.radio.propagation_delay_ms
        for addr in targets:
            receiver = self._by_addr[addr]
            if loss > 0.0 and self._loss_rng.random() < loss:
                self._record(
                    TraceRecord("dropped", self._now, addr.value, ptype=packet.type.value)
                )
                continue
            self._push(self._now + delay, _EV_DELIVER, (receiver, wire, meta))

    def _record(self, record: TraceRecord) -> None:
        self.trace.records.append(record)

    # --- run loop ----------------------------------------------------------

    def run(self) -> tuple[SimTrace, "metrics_mod.MetricsReport"]:
        cfg = self.config
        self._push(0, _EV_START, self.root)
        if cfg.mobility_model != "static":
            self._push(cfg.mobility_tick_ms, _EV_TICK, None)
        if cfg.routing_backend == "snapshot":
            self._push(0, _EV_SNAPSHOT, None)
        for index, t in cfg.removals:
            self._push(t, _EV_REMOVE, self._nodes[index])
        while self._queue:
            time, _, code, payload = heapq.heappop(self._queue)
            if time > cfg.duration_ms:
                break
            self._now = time
            if code == _EV_START:
                node = payload
                self._dispatch(
                    node, StartMonitoring(cfg.function, cfg.timeout_ms, self._now)
                )
            elif code == _EV_DELIVER:
                node, wire, meta = payload
                if not node.alive:
                    continue
                packet = decode_packet(wire)
                self._record(
                    TraceRecord("delivered", self._now, node.addr.value, ptype=packet.type.value)
                )
                self._dispatch(node, PacketIn(packet, self._now, meta))
            elif code == _EV_TIMER:
                node, timer_id = payload
                if not node.alive or timer_id not in node.live_timers:
                    continue
                node.live_timers.discard(timer_id)
                self._dispatch(node, TimerFired(timer_id, self._now))
            elif code == _EV_TICK:
                self._advance_positions()
                self._push(self._now + cfg.mobility_tick_ms, _EV_TICK, None)
            elif code == _EV_SNAPSHOT:
                self._snapshot = self._take_snapshot()
                self._push(self._now + cfg.snapshot_refresh_ms, _EV_SNAPSHOT, None)
            elif code == _EV_REMOVE:
                payload.alive = False
                payload.live_timers.clear()
        report = metrics_mod.reduce(self.trace, cfg)
        return self.trace, report

    def _advance_positions(self) -> None:
        cfg = self.config
        dt = cfg.mobility_tick_ms / 1000.0
        for node in self._nodes:
            if node.mobility is None or not node.alive:
                continue
            if isinstance(node.mobility, WaypointState):
                node.mobility = waypoint_step(node.mobility, dt, cfg.area, self._mobility_rng)
            else:
                node.mobility = walk_step(node.mobility, dt, cfg.area, self._mobility_rng)
            node.position = node.mobility.position

    # Exposed for tests and demos.

    def node_states(self) -> dict[Address, AutomatonState]:
        return {n.addr: n.proto.automaton for n in self._nodes}

    def metric_values(self) -> dict[Address, float]:
        return {n.addr: n.proto.metric for n in self._nodes}


def run(config: ScenarioConfig) -> tuple[SimTrace, "metrics_mod.MetricsReport"]:
    """Execute one seeded scenario and reduce its trace to metrics."""
    return Simulation(config).run()


def write_trace(trace: SimTrace, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(trace.to_ndjson())


def read_trace(path) -> SimTrace:
    with open(path, "r", encoding="utf-8") as fh:
        return SimTrace.from_ndjson(fh.read())
