"""Reduce simulation traces to the measured quantities and CSV summaries.

Convergence time runs from the start of monitoring (t=0 in every run) to the
root's verdict.  Accuracy is the verdict's observation count over the number
of nodes.  Runs without a verdict count into ``failure_rate`` and are
excluded from convergence means.
"""
from __future__ import annotations

import csv
import statistics
from collections import Counter
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

if TYPE_CHECKING:  # pragma: no cover
    from .sim import ScenarioConfig, SimTrace

CSV_COLUMNS = (
    "scenario",
    "nodes",
    "area",
    "speed",
    "mobility",
    "routing",
    "runs",
    "mean_convergence_ms",
    "sd_convergence_ms",
    "mean_observations",
    "mean_accuracy",
    "mean_packets",
    "mean_packet_bytes",
    "failure_rate",
)


@dataclass(frozen=True)
class MetricsReport:
    """One run, reduced."""

    convergence_time_ms: int | None
    observations: int
    node_count: int
    accuracy: float
    packets_sent: int
    mean_packet_bytes: float
    packets_by_type: dict[str, int] = field(default_factory=dict)
    errors: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "convergence_time_ms": self.convergence_time_ms,
            "observations": self.observations,
            "node_count": self.node_count,
            "accuracy": self.accuracy,
            "packets_sent": self.packets_sent,
            "mean_packet_bytes": self.mean_packet_bytes,
            "packets_by_type": dict(self.packets_by_type),
            "errors": dict(self.errors),
        }


def reduce(trace: "SimTrace", config: "ScenarioConfig") -> MetricsReport:
    """Fold one complete trace into a report."""
    verdict = next((r for r in trace.records if r.kind == "verdict"), None)
    sent = [r for r in trace.records if r.kind == "sent"]
    sizes = [r.size or 0 for r in sent]
    by_type = Counter(r.ptype for r in sent if r.ptype)
    errors = Counter(r.code for r in trace.records if r.kind == "error" and r.code)
    observations = verdict.observations if verdict is not None else 0
    return MetricsReport(
        convergence_time_ms=verdict.time if verdict is not None else None,
        observations=observations or 0,
        node_count=config.node_count,
        accuracy=(observations or 0) / config.node_count,
        packets_sent=len(sent),
        mean_packet_bytes=statistics.fmean(sizes) if sizes else 0.0,
        packets_by_type=dict(by_type),
        errors=dict(errors),
    )


@dataclass(frozen=True)
class MetricsSummary:
    """Aggregates over the replications of one scenario cell."""

    runs: int
    mean_convergence_ms: float | None
    sd_convergence_ms: float | None
    mean_observations: float
    mean_accuracy: float
    mean_packets: float
    mean_packet_bytes: float
    failure_rate: float


def summarize(reports: Sequence[MetricsReport]) -> MetricsSummary:
    """Arithmetic means over the reports; failed runs only affect failure_rate."""
    if not reports:
        raise ValueError("summarize needs at least one report")
    converged = [r.convergence_time_ms for r in reports if r.convergence_time_ms is not None]
    return MetricsSummary(
        runs=len(reports),
        mean_convergence_ms=statistics.fmean(converged) if converged else None,
        sd_convergence_ms=(
            statistics.stdev(converged) if len(converged) > 1 else (0.0 if converged else None)
        ),
        mean_observations=statistics.fmean(r.observations for r in reports),
        mean_accuracy=statistics.fmean(r.accuracy for r in reports),
        mean_packets=statistics.fmean(r.packets_sent for r in reports),
        mean_packet_bytes=statistics.fmean(r.mean_packet_bytes for r in reports),
        failure_rate=sum(1 for r in reports if r.convergence_time_ms is None) / len(reports),
    )


@dataclass(frozen=True)
class SummaryRow:
    """One CSV line: the cell's identity plus its summary numbers."""

    scenario: str
    nodes: int
    area: str
    speed: float
    mobility: str
    routing: str
    summary: MetricsSummary

    def as_fields(self) -> list:
        s = self.summary
        return [
            self.scenario,
            self.nodes,
            self.area,
            self.speed,
            self.mobility,
            self.routing,
            s.runs,
            "" if s.mean_convergence_ms is None else s.mean_convergence_ms,
            "" if s.sd_convergence_ms is None else s.sd_convergence_ms,
            s.mean_observations,
            s.mean_accuracy,
            s.mean_packets,
            s.mean_packet_bytes,
            s.failure_rate,
        ]


def make_summary_row(config: "ScenarioConfig", reports: Sequence[MetricsReport]) -> SummaryRow:
    return SummaryRow(
        scenario=config.name,
        nodes=config.node_count,
        area=f"{config.area.width:g}x{config.area.height:g}",
        speed=config.speed_mps if config.mobility_model != "static" else 0.0,
        mobility=config.mobility_model,
        routing=config.routing_backend,
        summary=summarize(reports),
    )


def write_csv(rows: Iterable[SummaryRow], path) -> None:
    """Write the summary table; stable column order, RFC-4180 quoting."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow(row.as_fields())
