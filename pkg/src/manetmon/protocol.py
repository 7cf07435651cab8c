"""Per-node monitoring automaton as a pure transition function.

``step(state, event, ctx) -> (new state, actions)`` drives one node through a
monitoring session: joining the query flood (which records the parent/child
hierarchy for this window), acknowledgment accounting, folding child reports,
and the fallback ladder for an unreachable parent (gossip route, then
relay-set forwards, then giving up).

The function is deterministic given the injected context (RNG stream,
neighborhood oracle, routing backend) and never touches shared state; the
simulator interprets the returned actions.

Timing discipline
-----------------
Each rebroadcast of the query carries ``timeout - hop_decrement_ms``, so a
node's collection window shrinks with its depth in the hierarchy.  Deeper
nodes therefore report strictly before their ancestors' windows close, which
makes a static connected network fold exactly.  Retry phases (waiting for a
report acknowledgment, routing, forwarding) run on a shorter window
(``window // retry_divisor``) so a rescue detour still lands inside the
ancestors' collection windows.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Union

from .aggregation import AggState, combine_all, finalize, local_observe
from .routing import RoutePacketMeta, choose_forward_target, gossip_next_hop
from .wire import (
    Address,
    AggregateBody,
    MonitoringPacket,
    MonitorFunction,
    PacketType,
    QueryBody,
    SessionId,
    make_session_id,
)

DEFAULT_HOP_DECREMENT_MS = 25
DEFAULT_RETRY_DIVISOR = 4

#: Error code logged when every fallback target has been exhausted.
ERR_ISOLATED = "isolated"


class AutomatonState(Enum):
    """The six node states of the monitoring automaton."""

    INITIAL = "initial"
    QUERY_SENT = "query_sent"      # query rebroadcast, no acknowledgments yet
    COLLECTING = "collecting"      # children acknowledged, awaiting reports
    REPORT_SENT = "report_sent"    # own report sent, awaiting acknowledgment
    ROUTING = "routing"            # hunting the parent with a gossip route
    FORWARDING = "forwarding"      # falling back to relay-set ancestors


class PacketClass(Enum):
    """What a received packet means to this node."""

    QUERY_JOIN = "query_join"            # fresh session, adopt the sender as parent
    QUERY_ACK = "query_ack"              # own query echoed by a new child
    QUERY_DUPLICATE = "query_duplicate"  # session already joined, discard
    REPORT_FOR_ME = "report_for_me"      # aggregate addressed to this node
    REPORT_ACK = "report_ack"            # own report confirmed received
    ROUTE_DELIVER = "route_deliver"      # routed aggregate found its target
    ROUTE_RELAY = "route_relay"          # this node is the next carrier
    FORWARD_DELIVER = "forward_deliver"  # relay-set fallback reached this node
    IGNORE = "ignore"


# --- events -----------------------------------------------------------------

@dataclass(frozen=True)
class StartMonitoring:
    function: MonitorFunction
    timeout_ms: int
    now: int


@dataclass(frozen=True)
class PacketIn:
    packet: MonitoringPacket
    now: int
    meta: RoutePacketMeta | None = None


@dataclass(frozen=True)
class TimerFired:
    timer_id: int
    now: int


Event = Union[StartMonitoring, PacketIn, TimerFired]


# --- actions ----------------------------------------------------------------

@dataclass(frozen=True)
class Broadcast:
    packet: MonitoringPacket
    meta: RoutePacketMeta | None = None


@dataclass(frozen=True)
class StartTimer:
    timer_id: int
    duration_ms: int


@dataclass(frozen=True)
class CancelTimer:
    timer_id: int


@dataclass(frozen=True)
class DeliverVerdict:
    outcome: float
    observations: int


@dataclass(frozen=True)
class LogError:
    code: str


@dataclass(frozen=True)
class Done:
    pass


Action = Union[Broadcast, StartTimer, CancelTimer, DeliverVerdict, LogError, Done]


@dataclass
class StepContext:
    """Environment injected into ``step``; owns all its nondeterminism."""

    rng: random.Random
    neighbors: Callable[[], tuple[Address, ...]] = lambda: ()
    hop_decrement_ms: int = DEFAULT_HOP_DECREMENT_MS
    retry_divisor: int = DEFAULT_RETRY_DIVISOR
    max_route_hops: int = 64
    route_backend: str = "gossip"  # "gossip" | "snapshot"
    snapshot_next_hop: Callable[[Address, Address], Address | None] | None = None


@dataclass
class NodeProtocolState:
    """One node's automaton state plus session bookkeeping."""

    self_addr: Address
    metric: float = 0.0
    is_root: bool = False
    automaton: AutomatonState = AutomatonState.INITIAL
    session: SessionId | None = None
    parent: Address | None = None
    relay_set: tuple[Address, ...] = ()
    function: MonitorFunction | None = None
    window_ms: int = 0
    acked_children: set[Address] = field(default_factory=set)
    received_child_aggregates: dict[Address, AggState] = field(default_factory=dict)
    extra_aggregates: dict[Address, AggState] = field(default_factory=dict)
    local: AggState | None = None
    own_report: AggState | None = None
    pending_timer: int | None = None
    next_timer_id: int = 1
    tried_forwards: list[Address] = field(default_factory=list)
    seen_sessions: set[SessionId] = field(default_factory=set)
    hard_deadline_ms: int | None = None

    def copy(self) -> "NodeProtocolState":
        return replace(
            self,
            acked_children=set(self.acked_children),
            received_child_aggregates=dict(self.received_child_aggregates),
            extra_aggregates=dict(self.extra_aggregates),
            tried_forwards=list(self.tried_forwards),
            seen_sessions=set(self.seen_sessions),
        )


_QUERY_STATES = (AutomatonState.QUERY_SENT, AutomatonState.COLLECTING)
_REPORT_STATES = (
    AutomatonState.REPORT_SENT,
    AutomatonState.ROUTING,
    AutomatonState.FORWARDING,
)


# --- classification ----------------------------------------------------------

def classify_packet(s: NodeProtocolState, p: MonitoringPacket) -> PacketClass:
    """Decide what an overheard packet means to this node."""
    live = s.session is not None and p.timestamp == s.session
    if p.type is PacketType.QUERY:
        if live and p.parent == s.self_addr:
            return PacketClass.QUERY_ACK
        if p.timestamp in s.seen_sessions:
            return PacketClass.QUERY_DUPLICATE
        return PacketClass.QUERY_JOIN
    if p.type is PacketType.AGGREGATE:
        if live and s.parent is not None and p.source == s.parent:
            return PacketClass.REPORT_ACK
        if live and p.destination == s.self_addr:
            return PacketClass.REPORT_FOR_ME
        return PacketClass.IGNORE
    if p.type is PacketType.AGGREGATE_ROUTE:
        if p.gateway == s.self_addr:
            if p.destination == s.self_addr:
                return PacketClass.ROUTE_DELIVER if live else PacketClass.IGNORE
            return PacketClass.ROUTE_RELAY
        return PacketClass.IGNORE
    # AGGREGATE_FORWARD: delivers on destination match (opportunistically, any
    # overheard copy counts); relays on gateway match like a routed packet.
    if p.destination == s.self_addr:
        if live and (p.source == s.parent or p.source in s.tried_forwards):
            return PacketClass.REPORT_ACK
        return PacketClass.FORWARD_DELIVER if live else PacketClass.IGNORE
    if p.gateway == s.self_addr:
        return PacketClass.ROUTE_RELAY
    return PacketClass.IGNORE


# --- packet builders ----------------------------------------------------------

def child_relay_set(incoming: MonitoringPacket) -> tuple[Address, ...]:
    """Fallback targets for a node adopting the sender as its parent.

    The sender goes first (it is the new parent), followed by the sender's own
    relay entries; this yields parent, grandparent, great-grandparent.  The
    root names itself in its own relay set, hence the dedup.
    """
    ordered: list[Address] = []
    for a in (incoming.source, *incoming.query.relay_set):
        if a not in ordered:
            ordered.append(a)
    return tuple(ordered[:3])


def build_child_query(
    s: NodeProtocolState,
    incoming: MonitoringPacket,
    hop_decrement_ms: int = DEFAULT_HOP_DECREMENT_MS,
) -> MonitoringPacket:
    """Rebroadcast of a received query, which doubles as the acknowledgment.

    The parent field names the sender's own parent, so the previous hop can
    recognize the echo; the carried timeout shrinks by one hop step.
    """
    return MonitoringPacket(
        type=PacketType.QUERY,
        parent=incoming.source,
        source=s.self_addr,
        destination=incoming.source,
        gateway=incoming.source,
        timeout_ms=max(incoming.timeout_ms - hop_decrement_ms, 1),
        timestamp=incoming.timestamp,
        query=QueryBody(incoming.query.function, child_relay_set(incoming)),
    )


def _report_packet(s: NodeProtocolState, ptype: PacketType, destination: Address,
                   gateway: Address, payload: AggState) -> MonitoringPacket:
    return MonitoringPacket(
        type=ptype,
        parent=s.parent if s.parent is not None else s.self_addr,
        source=s.self_addr,
        destination=destination,
        gateway=gateway,
        timeout_ms=max(s.window_ms, 1),
        timestamp=s.session,  # type: ignore[arg-type]
        aggregate=AggregateBody(payload.outcome, payload.observations),
    )


# --- the transition function ---------------------------------------------------

def step(
    state: NodeProtocolState, event: Event, ctx: StepContext
) -> tuple[NodeProtocolState, list[Action]]:
    """Apply one event; returns the successor state and the emitted actions.

    Unexpected but harmless (state, packet-class) pairs log an
    ``illegal:<state>:<class>`` error and change nothing — stale packets are
    routine under mobility.
    """
    s = state.copy()
    actions: list[Action] = []
    if isinstance(event, StartMonitoring):
        _on_start(s, event, actions)
    elif isinstance(event, TimerFired):
        _on_timer(s, event, actions, ctx)
    elif isinstance(event, PacketIn):
        _on_packet(s, event, actions, ctx)
    else:  # pragma: no cover
        raise TypeError(f"unknown event {event!r}")
    return s, actions


# --- helpers -------------------------------------------------------------------

def _illegal(s: NodeProtocolState, what: str, actions: list[Action]) -> None:
    actions.append(LogError(f"illegal:{s.automaton.value}:{what}"))


def _restart_timer(s: NodeProtocolState, actions: list[Action], duration_ms: int) -> None:
    if s.pending_timer is not None:
        actions.append(CancelTimer(s.pending_timer))
    tid = s.next_timer_id
    s.next_timer_id += 1
    s.pending_timer = tid
    actions.append(StartTimer(tid, max(duration_ms, 1)))


def _retry_window(s: NodeProtocolState, ctx: StepContext) -> int:
    return max(s.window_ms // max(ctx.retry_divisor, 1), 1)


def _arm_hard_deadline(s: NodeProtocolState, actions: list[Action], now: int) -> None:
    """Re-arm the timer toward the session's fixed partial-fold deadline.

    The deadline is absolute (set at join time), never extended by arrivals:
    a sliding deadline would let a descendant outlast its ancestors and lose
    its whole branch.  It sits at twice the collection window because a child
    whose parent died only reaches us after its own window plus two retry
    phases (report, route, forward); healthy subtrees complete by coverage
    before any timer fires, so exact folds never wait on it.
    """
    assert s.hard_deadline_ms is not None
    _restart_timer(s, actions, max(s.hard_deadline_ms - now, 1))


def _reset_session(s: NodeProtocolState) -> None:
    s.automaton = AutomatonState.INITIAL
    s.session = None
    s.parent = None
    s.relay_set = ()
    s.function = None
    s.window_ms = 0
    s.acked_children = set()
    s.received_child_aggregates = {}
    s.extra_aggregates = {}
    s.local = None
    s.own_report = None
    s.pending_timer = None
    s.tried_forwards = []
    s.hard_deadline_ms = None


def _fold_all(s: NodeProtocolState) -> AggState:
    """Everything this node knows, in a fixed (deterministic) order."""
    assert s.function is not None and s.local is not None
    parts = [s.local]
    parts += [s.received_child_aggregates[a] for a in sorted(s.received_child_aggregates)]
    parts += [s.extra_aggregates[a] for a in sorted(s.extra_aggregates)]
    return combine_all(s.function, parts)


def _coverage_complete(s: NodeProtocolState) -> bool:
    return s.acked_children <= set(s.received_child_aggregates)


def _pick_hop(
    s: NodeProtocolState, destination: Address, meta: RoutePacketMeta, ctx: StepContext
) -> Address | None:
    if ctx.route_backend == "snapshot" and ctx.snapshot_next_hop is not None:
        if meta.hops >= meta.max_hops:
            return None
        return ctx.snapshot_next_hop(s.self_addr, destination)
    return gossip_next_hop(ctx.neighbors(), meta, ctx.rng)


# --- event handlers --------------------------------------------------------------

def _on_start(s: NodeProtocolState, e: StartMonitoring, actions: list[Action]) -> None:
    if s.automaton is not AutomatonState.INITIAL:
        _illegal(s, "start_monitoring", actions)
        return
    session = make_session_id(s.self_addr, e.now)
    s.is_root = True
    s.session = session
    s.seen_sessions.add(session)
    s.parent = s.self_addr
    s.relay_set = (s.self_addr,)
    s.function = e.function
    s.window_ms = e.timeout_ms
    s.hard_deadline_ms = e.now + 2 * s.window_ms
    s.local = local_observe(e.function, s.metric)
    s.automaton = AutomatonState.QUERY_SENT
    actions.append(
        Broadcast(
            MonitoringPacket(
                type=PacketType.QUERY,
                parent=s.self_addr,
                source=s.self_addr,
                destination=s.self_addr,
                gateway=s.self_addr,
                timeout_ms=e.timeout_ms,
                timestamp=session,
                query=QueryBody(e.function, (s.self_addr,)),
            )
        )
    )
    _restart_timer(s, actions, s.window_ms)


def _on_timer(
    s: NodeProtocolState, e: TimerFired, actions: list[Action], ctx: StepContext
) -> None:
    if e.timer_id != s.pending_timer:
        return  # superseded timer, already replaced or session over
    s.pending_timer = None
    st = s.automaton
    if st in _QUERY_STATES:
        # Collection window closed: edge nodes report their own observation,
        # interior nodes fold whatever arrived (missing children stay missing).
        if s.is_root:
            _finish_root(s, actions)
        else:
            _send_report(s, actions, ctx)
    elif st is AutomatonState.REPORT_SENT:
        _start_route(s, actions, ctx)
    elif st is AutomatonState.ROUTING:
        s.automaton = AutomatonState.FORWARDING
        _try_next_forward(s, actions, ctx, escalate_when_empty=False)
    elif st is AutomatonState.FORWARDING:
        _try_next_forward(s, actions, ctx, escalate_when_empty=True)
    # INITIAL: stale fire, nothing pending.


def _send_report(s: NodeProtocolState, actions: list[Action], ctx: StepContext) -> None:
    assert s.parent is not None
    s.own_report = _fold_all(s)
    actions.append(
        Broadcast(_report_packet(s, PacketType.AGGREGATE, s.parent, s.parent, s.own_report))
    )
    s.automaton = AutomatonState.REPORT_SENT
    _restart_timer(s, actions, _retry_window(s, ctx))


def _finish_root(s: NodeProtocolState, actions: list[Action]) -> None:
    report = _fold_all(s)
    assert s.function is not None
    actions.append(DeliverVerdict(finalize(s.function, report), report.observations))
    if s.acked_children:
        # The root sends nothing upward, so children could never overhear a
        # relayed report; an explicit self-addressed broadcast acknowledges
        # them all at once (they match on the source).
        actions.append(
            Broadcast(_report_packet(s, PacketType.AGGREGATE, s.self_addr, s.self_addr, report))
        )
    if s.pending_timer is not None:
        actions.append(CancelTimer(s.pending_timer))
    actions.append(Done())
    _reset_session(s)


def _start_route(s: NodeProtocolState, actions: list[Action], ctx: StepContext) -> None:
    """No acknowledgment arrived: hunt the parent with a routed copy."""
    assert s.parent is not None and s.own_report is not None
    s.automaton = AutomatonState.ROUTING
    meta = RoutePacketMeta(path=(s.self_addr,), max_hops=ctx.max_route_hops)
    hop = _pick_hop(s, s.parent, meta, ctx)
    if hop is not None:
        actions.append(
            Broadcast(
                _report_packet(s, PacketType.AGGREGATE_ROUTE, s.parent, hop, s.own_report),
                meta,
            )
        )
    # No carrier available: stay silent and escalate when the window closes.
    _restart_timer(s, actions, _retry_window(s, ctx))


def _try_next_forward(
    s: NodeProtocolState,
    actions: list[Action],
    ctx: StepContext,
    escalate_when_empty: bool,
) -> None:
    assert s.own_report is not None
    target = choose_forward_target(s.relay_set[1:], s.tried_forwards)
    if target is None:
        if escalate_when_empty:
            actions.append(LogError(ERR_ISOLATED))
            _reset_session(s)
        else:
            _restart_timer(s, actions, _retry_window(s, ctx))
        return
    s.tried_forwards.append(target)
    meta = RoutePacketMeta(path=(s.self_addr,), max_hops=ctx.max_route_hops)
    hop = _pick_hop(s, target, meta, ctx)
    if hop is not None:
        actions.append(
            Broadcast(
                _report_packet(s, PacketType.AGGREGATE_FORWARD, target, hop, s.own_report),
                meta,
            )
        )
    _restart_timer(s, actions, _retry_window(s, ctx))


def _on_packet(
    s: NodeProtocolState, e: PacketIn, actions: list[Action], ctx: StepContext
) -> None:
    p = e.packet
    cls = classify_packet(s, p)
    if cls is PacketClass.IGNORE or cls is PacketClass.QUERY_DUPLICATE:
        return
    if cls is PacketClass.QUERY_JOIN:
        if s.automaton is not AutomatonState.INITIAL:
            _illegal(s, cls.value, actions)
            return
        _join_session(s, p, e.now, actions, ctx)
    elif cls is PacketClass.QUERY_ACK:
        if s.automaton not in _QUERY_STATES:
            _illegal(s, cls.value, actions)
            return
        s.acked_children.add(p.source)
        if s.automaton is AutomatonState.QUERY_SENT:
            s.automaton = AutomatonState.COLLECTING
            _arm_hard_deadline(s, actions, e.now)
    elif cls is PacketClass.REPORT_ACK:
        if s.automaton not in _REPORT_STATES:
            _illegal(s, cls.value, actions)
            return
        if s.pending_timer is not None:
            actions.append(CancelTimer(s.pending_timer))
        actions.append(Done())
        _reset_session(s)
    elif cls is PacketClass.REPORT_FOR_ME:
        _absorb_report(s, p, None, e.now, actions, ctx, send_receipt=False)
    elif cls is PacketClass.ROUTE_DELIVER or cls is PacketClass.FORWARD_DELIVER:
        _absorb_report(s, p, e.meta, e.now, actions, ctx, send_receipt=True)
    elif cls is PacketClass.ROUTE_RELAY:
        _relay(s, p, e.meta, actions, ctx)


def _join_session(
    s: NodeProtocolState, p: MonitoringPacket, now: int, actions: list[Action], ctx: StepContext
) -> None:
    assert p.query is not None
    s.session = p.timestamp
    s.seen_sessions.add(p.timestamp)
    s.parent = p.source
    s.relay_set = child_relay_set(p)
    s.function = p.query.function
    s.window_ms = max(p.timeout_ms - ctx.hop_decrement_ms, 1)
    s.hard_deadline_ms = now + 2 * s.window_ms
    s.local = local_observe(s.function, s.metric)
    s.automaton = AutomatonState.QUERY_SENT
    actions.append(Broadcast(build_child_query(s, p, ctx.hop_decrement_ms)))
    _restart_timer(s, actions, s.window_ms)


def _absorb_report(
    s: NodeProtocolState,
    p: MonitoringPacket,
    meta: RoutePacketMeta | None,
    now: int,
    actions: list[Action],
    ctx: StepContext,
    send_receipt: bool,
) -> None:
    """Fold an arriving aggregate into this node's session bookkeeping.

    Re-deliveries replace the previous value for the same origin, so retries
    and rescue detours never double-count.  Rescue deliveries (route/forward)
    are receipted back along the reverse of the path they arrived by; the
    plain upward flow is acknowledged by this node's own relayed report.
    """
    assert p.aggregate is not None
    payload = AggState(p.aggregate.outcome, p.aggregate.observations)
    if p.source in s.acked_children:
        s.received_child_aggregates[p.source] = payload
    else:
        s.extra_aggregates[p.source] = payload
    if send_receipt:
        _send_receipt(s, p, meta, actions)
    if s.automaton in _QUERY_STATES:
        if s.automaton is AutomatonState.COLLECTING and _coverage_complete(s):
            if s.is_root:
                _finish_root(s, actions)
            else:
                _send_report(s, actions, ctx)
        else:
            # Still waiting on children (or, before any acknowledgment, on
            # whatever sent this); hold out until the session deadline.
            _arm_hard_deadline(s, actions, now)
    elif s.automaton in _REPORT_STATES:
        # Already reported: fold the late arrival in and resend the updated
        # total; the parent replaces this node's entry, nothing double-counts.
        assert s.parent is not None
        s.own_report = _fold_all(s)
        actions.append(
            Broadcast(_report_packet(s, PacketType.AGGREGATE, s.parent, s.parent, s.own_report))
        )
        _restart_timer(s, actions, _retry_window(s, ctx))


def _send_receipt(
    s: NodeProtocolState,
    p: MonitoringPacket,
    meta: RoutePacketMeta | None,
    actions: list[Action],
) -> None:
    assert p.aggregate is not None
    reverse = tuple(reversed(meta.path)) if meta is not None else (p.source,)
    receipt_meta = RoutePacketMeta(
        path=(s.self_addr,), max_hops=len(reverse) + 2, fixed_path=reverse
    )
    actions.append(
        Broadcast(
            _report_packet(
                s,
                PacketType.AGGREGATE_FORWARD,
                p.source,
                reverse[0],
                AggState(p.aggregate.outcome, p.aggregate.observations),
            ),
            receipt_meta,
        )
    )


def _relay(
    s: NodeProtocolState,
    p: MonitoringPacket,
    meta: RoutePacketMeta | None,
    actions: list[Action],
    ctx: StepContext,
) -> None:
    """Carry someone else's routed packet one hop further; state-independent."""
    if meta is None:
        meta = RoutePacketMeta(path=(p.source,), max_hops=ctx.max_route_hops)
    advanced = meta.advanced(s.self_addr)
    if advanced.fixed_path:
        hop = advanced.fixed_path[0] if advanced.hops < advanced.max_hops else None
    else:
        hop = _pick_hop(s, p.destination, advanced, ctx)
    if hop is None:
        return  # hop budget spent or nobody around: the walker dies here
    actions.append(Broadcast(replace(p, gateway=hop), advanced))
