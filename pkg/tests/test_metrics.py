"""Metrics reduction and CSV summaries."""
from __future__ import annotations

import csv

import pytest

from manetmon.metrics import (
    CSV_COLUMNS,
    MetricsReport,
    make_summary_row,
    reduce,
    summarize,
    write_csv,
)
from manetmon.mobility import Area
from manetmon.sim import ScenarioConfig, SimTrace, TraceRecord, run

from helpers import static_config


def _trace(records, node_count=25):
    cfg = ScenarioConfig(node_count=node_count, area=Area(350.0, 350.0))
    return SimTrace(meta=cfg.to_dict(), records=records), cfg


def _report(**kwargs) -> MetricsReport:
    base = dict(
        convergence_time_ms=1000,
        observations=20,
        node_count=25,
        accuracy=0.8,
        packets_sent=89,
        mean_packet_bytes=98.0,
    )
    base.update(kwargs)
    return MetricsReport(**base)


def test_reduce_reads_verdict_and_packet_stats():
    records = [
        TraceRecord("sent", 0, "10.0.0.1", ptype="query", size=100, fanout=2),
        TraceRecord("sent", 5, "10.0.0.2", ptype="aggregate", size=120, fanout=1),
        TraceRecord("verdict", 950, "10.0.0.1", outcome=2.0, observations=20),
        TraceRecord("error", 990, "10.0.0.3", code="isolated"),
    ]
    trace, cfg = _trace(records)
    report = reduce(trace, cfg)
    assert report.convergence_time_ms == 950
    assert report.observations == 20
    assert report.accuracy == pytest.approx(0.80)
    assert report.packets_sent == 2
    assert report.mean_packet_bytes == pytest.approx(110.0)
    assert report.packets_by_type == {"query": 1, "aggregate": 1}
    assert report.errors == {"isolated": 1}


def test_reduce_accuracy_examples():
    trace, cfg = _trace([TraceRecord("verdict", 1, "10.0.0.1", outcome=1.0, observations=18)])
    assert reduce(trace, cfg).accuracy == pytest.approx(0.72)


def test_reduce_without_verdict_is_a_failure():
    trace, cfg = _trace([TraceRecord("sent", 0, "10.0.0.1", ptype="query", size=90, fanout=0)])
    report = reduce(trace, cfg)
    assert report.convergence_time_ms is None
    assert report.observations == 0
    assert report.accuracy == 0.0


def test_packets_sent_counts_sent_records_exactly():
    trace, report = run(static_config([(0.0, 0.0), (50.0, 0.0), (100.0, 0.0)]))
    assert report.packets_sent == sum(1 for r in trace.records if r.kind == "sent")


def test_summarize_singleton_is_identity():
    report = _report()
    s = summarize([report])
    assert s.runs == 1
    assert s.mean_convergence_ms == 1000
    assert s.sd_convergence_ms == 0.0
    assert s.mean_accuracy == pytest.approx(0.8)
    assert s.failure_rate == 0.0


def test_summarize_means_and_failures():
    reports = [
        _report(accuracy=1.0, observations=25),
        _report(accuracy=0.6, observations=15),
        _report(convergence_time_ms=None, accuracy=0.0, observations=0),
    ]
    s = summarize(reports)
    assert s.mean_accuracy == pytest.approx((1.0 + 0.6 + 0.0) / 3)
    assert s.mean_convergence_ms == pytest.approx(1000.0)  # failures excluded
    assert s.failure_rate == pytest.approx(1 / 3)


def test_summarize_rejects_empty():
    with pytest.raises(ValueError):
        summarize([])


def test_accuracy_stays_in_unit_interval_on_static_runs():
    trace, report = run(static_config([(0.0, 0.0), (50.0, 0.0), (100.0, 0.0)]))
    assert 0.0 <= report.accuracy <= 1.0
    assert (report.accuracy == 1.0) == (report.observations == report.node_count)


def test_write_csv_header_only(tmp_path):
    path = tmp_path / "empty.csv"
    write_csv([], path)
    assert path.read_bytes() == (",".join(CSV_COLUMNS) + "\r\n").encode()


def test_write_csv_one_row(tmp_path):
    cfg = ScenarioConfig(node_count=25, area=Area(350.0, 350.0), name="cell-a",
                         mobility_model="waypoint", speed_mps=5.0)
    row = make_summary_row(cfg, [_report()])
    path = tmp_path / "summary.csv"
    write_csv([row], path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(CSV_COLUMNS)
    assert len(rows) == 2
    assert rows[1][0] == "cell-a"
    assert rows[1][1] == "25"
    assert rows[1][2] == "350x350"
    assert rows[1][13] == "0.0"


def test_csv_bytes_deterministic(tmp_path):
    cfg = ScenarioConfig(node_count=25, area=Area(350.0, 350.0))
    reports = [_report(), _report(accuracy=0.76, observations=19)]
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv([make_summary_row(cfg, reports)], p1)
    write_csv([make_summary_row(cfg, reports)], p2)
    assert p1.read_bytes() == p2.read_bytes()
