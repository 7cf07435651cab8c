"""Monitoring packet data model and its canonical JSON wire codec.

One packet shape serves all phases of a monitoring session.  Query packets
carry the monitored function and the sender's fallback relay set; report
packets (``aggregate``, ``aggregate_route``, ``aggregate_forward``) carry an
accumulated outcome plus the number of observations folded into it.

Encoding is canonical: fixed key order, no insignificant whitespace, UTF-8.
Two equal packets always produce byte-identical encodings, which is what the
golden-fixture tests pin down.  Decoding tolerates arbitrary key order and
whitespace on input.
"""
from __future__ import annotations

import functools
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any


class DecodeError(ValueError):
    """Raised when a byte sequence is not a valid monitoring packet.

    ``code`` is one of: ``malformed``, ``unknown_type``, ``missing_field``,
    ``body_mismatch``, ``bad_address``, ``bad_timeout``.  Unknown enumeration
    tokens (packet type or monitored function) map to ``unknown_type``.
    """

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@functools.total_ordering
@dataclass(frozen=True)
class Address:
    """Textual IPv4 node address, totally ordered by octet tuple."""

    value: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "_octets", _parse_octets(self.value))

    @property
    def octets(self) -> tuple[int, int, int, int]:
        return self._octets  # type: ignore[attr-defined]

    def __lt__(self, other: "Address") -> bool:
        if not isinstance(other, Address):
            return NotImplemented
        return self.octets < other.octets

    def __str__(self) -> str:
        return self.value

    def __repr__(self) -> str:
        return f"Address({self.value!r})"


def _parse_octets(text: str) -> tuple[int, int, int, int]:
    parts = text.split(".")
    if len(parts) != 4:
        raise ValueError(f"not a dotted quad: {text!r}")
    octets = []
    for part in parts:
        if not part.isdigit() or (len(part) > 1 and part[0] == "0") or len(part) > 3:
            raise ValueError(f"bad octet {part!r} in {text!r}")
        n = int(part)
        if n > 255:
            raise ValueError(f"octet out of range in {text!r}")
        octets.append(n)
    return tuple(octets)  # type: ignore[return-value]


@dataclass(frozen=True, eq=False)
class SessionId:
    """One monitoring window, identified by the starting node and launch time.

    The wire form is the bare concatenation of the source address and the
    launch time, e.g. ``10.0.0.11500000000000``.  That concatenation is not
    always uniquely splittable, so identity (equality, hashing) is defined on
    the serialized token; ``parse`` picks the longest valid final octet when
    reading one back.
    """

    source: Address
    launch_unix_ms: int

    def __post_init__(self) -> None:
        if self.launch_unix_ms < 0:
            raise ValueError("launch time must be >= 0")

    @property
    def token(self) -> str:
        return self.source.value + str(self.launch_unix_ms)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SessionId):
            return NotImplemented
        return self.token == other.token

    def __hash__(self) -> int:
        return hash(self.token)

    def __repr__(self) -> str:
        return f"SessionId({self.token!r})"

    @classmethod
    def parse(cls, token: str) -> "SessionId":
        head, _, tail = token.rpartition(".")
        if not head or not tail:
            raise ValueError(f"bad session token {token!r}")
        # tail = final octet immediately followed by the launch-time digits;
        # prefer the longest octet so that parse is a deterministic function.
        for octet_len in (3, 2, 1):
            octet, rest = tail[:octet_len], tail[octet_len:]
            if not rest or not rest.isdigit():
                continue
            if rest != "0" and rest.startswith("0"):
                continue
            try:
                source = Address(f"{head}.{octet}")
            except ValueError:
                continue
            return cls(source, int(rest))
        raise ValueError(f"bad session token {token!r}")


def make_session_id(source: Address, now_unix_ms: int) -> SessionId:
    """Build the identifier labelling the monitoring window started now."""
    return SessionId(source, now_unix_ms)


class PacketType(Enum):
    QUERY = "query"
    AGGREGATE = "aggregate"
    AGGREGATE_ROUTE = "aggregate_route"
    AGGREGATE_FORWARD = "aggregate_forward"


#: Packet types that carry an aggregate body.
REPORT_TYPES = frozenset(
    {PacketType.AGGREGATE, PacketType.AGGREGATE_ROUTE, PacketType.AGGREGATE_FORWARD}
)


class MonitorFunction(Enum):
    AVG_CPU = "AVG_CPU"
    AVG_RAM = "AVG_RAM"
    SUM = "SUM"
    COUNT = "COUNT"
    MIN = "MIN"
    MAX = "MAX"


@dataclass(frozen=True)
class QueryBody:
    """Query payload: the function to compute and the sender's relay set.

    The relay set lists up to three fallback targets, nearest ancestor first
    (the sender's parent, grandparent, great-grandparent).
    """

    function: MonitorFunction
    relay_set: tuple[Address, ...] = ()

    def __post_init__(self) -> None:
        if len(self.relay_set) > 3:
            raise ValueError("relay set holds at most three entries")


@dataclass(frozen=True)
class AggregateBody:
    """Report payload: accumulated outcome and observation count."""

    outcome: float
    observations: int

    def __post_init__(self) -> None:
        if self.observations < 1:
            raise ValueError("a transmitted report folds at least one observation")


@dataclass(frozen=True)
class MonitoringPacket:
    """The single message shape exchanged during a monitoring session."""

    type: PacketType
    parent: Address
    source: Address
    destination: Address
    gateway: Address
    timeout_ms: int
    timestamp: SessionId
    query: QueryBody | None = None
    aggregate: AggregateBody | None = None

    def __post_init__(self) -> None:
        if self.timeout_ms <= 0:
            raise ValueError("timeout must be positive")
        wants_query = self.type is PacketType.QUERY
        if wants_query and (self.query is None or self.aggregate is not None):
            raise ValueError("query packets carry exactly a query body")
        if not wants_query and (self.aggregate is None or self.query is not None):
            raise ValueError("report packets carry exactly an aggregate body")


def encode_packet(p: MonitoringPacket) -> bytes:
    """Serialize a packet to its canonical UTF-8 JSON bytes."""
    obj: dict[str, Any] = {
        "type": p.type.value,
        "parent": p.parent.value,
        "source": p.source.value,
        "destination": p.destination.value,
        "gateway": p.gateway.value,
        "timeout": p.timeout_ms,
        "timestamp": p.timestamp.token,
    }
    if p.query is not None:
        obj["query"] = {
            "function": p.query.function.value,
            "relaySet": [a.value for a in p.query.relay_set],
        }
    if p.aggregate is not None:
        obj["aggregate"] = {
            "outcome": p.aggregate.outcome,
            "observations": p.aggregate.observations,
        }
    return json.dumps(obj, separators=(",", ":")).encode("utf-8")


def _require(obj: dict, name: str) -> Any:
    if name not in obj:
        raise DecodeError("missing_field", name)
    return obj[name]


def _address(value: Any, context: str) -> Address:
    if not isinstance(value, str):
        raise DecodeError("bad_address", f"{context} is not a string")
    try:
        return Address(value)
    except ValueError as exc:
        raise DecodeError("bad_address", f"{context}: {exc}") from exc


def decode_packet(b: bytes | str) -> MonitoringPacket:
    """Parse wire bytes into a packet, validating every field.

    Raises :class:`DecodeError` on any malformed input; see the class
    docstring for the error codes.
    """
    try:
        obj = json.loads(b)
    except (ValueError, UnicodeDecodeError) as exc:
        raise DecodeError("malformed", str(exc)) from exc
    if not isinstance(obj, dict):
        raise DecodeError("malformed", "top level is not an object")

    type_token = _require(obj, "type")
    try:
        ptype = PacketType(type_token)
    except ValueError:
        raise DecodeError("unknown_type", repr(type_token)) from None

    parent = _address(_require(obj, "parent"), "parent")
    source = _address(_require(obj, "source"), "source")
    destination = _address(_require(obj, "destination"), "destination")
    gateway = _address(_require(obj, "gateway"), "gateway")

    timeout = _require(obj, "timeout")
    if not isinstance(timeout, int) or isinstance(timeout, bool) or timeout <= 0:
        raise DecodeError("bad_timeout", repr(timeout))

    token = _require(obj, "timestamp")
    if not isinstance(token, str):
        raise DecodeError("malformed", "timestamp is not a string")
    try:
        session = SessionId.parse(token)
    except ValueError as exc:
        raise DecodeError("bad_address", str(exc)) from exc

    query = None
    aggregate = None
    if ptype is PacketType.QUERY:
        if "aggregate" in obj or "query" not in obj:
            raise DecodeError("body_mismatch", "query packets carry a query body")
        query = _decode_query_body(obj["query"])
    else:
        if "query" in obj or "aggregate" not in obj:
            raise DecodeError("body_mismatch", "report packets carry an aggregate body")
        aggregate = _decode_aggregate_body(obj["aggregate"])

    return MonitoringPacket(
        type=ptype,
        parent=parent,
        source=source,
        destination=destination,
        gateway=gateway,
        timeout_ms=timeout,
        timestamp=session,
        query=query,
        aggregate=aggregate,
    )


def _decode_query_body(body: Any) -> QueryBody:
    if not isinstance(body, dict):
        raise DecodeError("malformed", "query body is not an object")
    token = _require(body, "function")
    try:
        function = MonitorFunction(token)
    except (ValueError, TypeError):
        raise DecodeError("unknown_type", f"function {token!r}") from None
    relay = _require(body, "relaySet")
    if not isinstance(relay, list) or len(relay) > 3:
        raise DecodeError("malformed", "relaySet must be a list of at most three addresses")
    return QueryBody(function, tuple(_address(a, "relaySet entry") for a in relay))


def _decode_aggregate_body(body: Any) -> AggregateBody:
    if not isinstance(body, dict):
        raise DecodeError("malformed", "aggregate body is not an object")
    outcome = _require(body, "outcome")
    if isinstance(outcome, bool) or not isinstance(outcome, (int, float)):
        raise DecodeError("malformed", "outcome is not a number")
    observations = _require(body, "observations")
    if isinstance(observations, bool) or not isinstance(observations, int) or observations < 1:
        raise DecodeError("malformed", "observations must be a positive integer")
    return AggregateBody(float(outcome), observations)
