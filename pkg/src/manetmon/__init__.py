"""Hybrid gossip/hierarchical monitoring for mobile ad-hoc networks.

A query floods the network and, as a side effect, records a parent/child
hierarchy valid for one monitoring window; results then fold back up that
hierarchy, with gossip routing and relay-set fallbacks rescuing reports when
mobility breaks a link.  The package ships the protocol as a pure state
machine plus a deterministic discrete-event simulator, metrics reduction,
and a scenario runner.
"""

__version__ = "0.1.0"

from .aggregation import AggState, EmptyAggregate, combine, finalize, local_observe
from .metrics import MetricsReport, MetricsSummary, SummaryRow, reduce, summarize, write_csv
from .sim import RadioModel, ScenarioConfig, SimTrace, Simulation, run
from .wire import (
    Address,
    AggregateBody,
    DecodeError,
    MonitorFunction,
    MonitoringPacket,
    PacketType,
    QueryBody,
    SessionId,
    decode_packet,
    encode_packet,
    make_session_id,
)

__all__ = [
    "AggState",
    "Address",
    "AggregateBody",
    "DecodeError",
    "EmptyAggregate",
    "MetricsReport",
    "MetricsSummary",
    "MonitorFunction",
    "MonitoringPacket",
    "PacketType",
    "QueryBody",
    "RadioModel",
    "ScenarioConfig",
    "SessionId",
    "SimTrace",
    "Simulation",
    "SummaryRow",
    "combine",
    "decode_packet",
    "encode_packet",
    "finalize",
    "local_observe",
    "make_session_id",
    "reduce",
    "run",
    "summarize",
    "write_csv",
]
