"""Scenario runner.

Reads a declarative INI config, expands it into a manifest of scenario cells
(one per combination of swept parameters), executes seeded replications, and
writes per-run metrics plus a summary CSV.  Re-running the same config with
the same base seed reproduces every output byte for byte.

Config format
-------------
A ``[scenario]`` section holds the base parameters.  Optional ``[cell.NAME]``
sections override base keys for paired parameter combinations (for example a
node count together with its density-matched area).  Within each cell, the
keys ``node_count``, ``area``, ``speed_mps``, ``mobility``, ``routing`` and
``function`` accept comma-separated lists and expand cartesian.  Seeds are
``seed + replication index``, identical across cells so cells are seed-paired.

    [scenario]
    name = speeds
    function = AVG_CPU
    node_count = 25
    area = 350x350
    mobility = waypoint
    speed_mps = 5, 10, 15
    routing = gossip
    range_m = 125
    timeout_ms = 1000
    duration_ms = 30000
    replications = 25
    seed = 42
"""
from __future__ import annotations

import argparse
import configparser
import itertools
import json
import multiprocessing
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from . import metrics as metrics_mod
from . import sim as sim_mod
from .mobility import Area
from .sim import ConfigError, RadioModel, ScenarioConfig
from .wire import MonitorFunction

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

_SWEEP_KEYS = ("node_count", "area", "speed_mps", "mobility", "routing", "function")


@dataclass(frozen=True)
class RunManifest:
    """Expanded work list: one ScenarioConfig per cell, plus run bookkeeping."""

    cells: tuple[ScenarioConfig, ...]
    replications: int
    base_seed: int


def _parse_area(text: str) -> Area:
    try:
        w, h = text.lower().split("x")
        return Area(float(w), float(h))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"area must look like 350x350, got {text!r}") from exc


def _split_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _cell_configs(name: str, raw: dict[str, str]) -> list[ScenarioConfig]:
    """Expand one resolved cell into configs (cartesian over list keys)."""
    sweeps = {}
    for key in _SWEEP_KEYS:
        if key in raw:
            sweeps[key] = _split_list(raw[key])
    fixed = {k: v for k, v in raw.items() if k not in sweeps}
    configs = []
    for combo in itertools.product(*sweeps.values()) if sweeps else [()]:
        values = dict(fixed)
        values.update(dict(zip(sweeps.keys(), combo)))
        configs.append(_build_config(name, values))
    return configs


def _build_config(cell_name: str, v: dict[str, str]) -> ScenarioConfig:
    # Swept values need no label suffix: nodes/area/speed/mobility/routing all
    # have their own CSV columns, which keeps rows distinguishable.
    try:
        label = v.get("name", "scenario")
        if cell_name != "scenario":
            label = f"{label}/{cell_name}"
        cfg = ScenarioConfig(
            name=label,
            node_count=int(v["node_count"]),
            area=_parse_area(v.get("area", "350x350")),
            mobility_model=v.get("mobility", "static"),
            speed_mps=float(v.get("speed_mps", 5.0)),
            radio=RadioModel(
                range_m=float(v.get("range_m", 125.0)),
                propagation_delay_ms=int(v.get("propagation_delay_ms", 1)),
                loss_probability=float(v.get("loss_probability", 0.0)),
            ),
            function=MonitorFunction(v.get("function", "COUNT").strip().upper()),
            timeout_ms=int(v.get("timeout_ms", 1000)),
            hop_decrement_ms=int(v.get("hop_decrement_ms", 25)),
            retry_divisor=int(v.get("retry_divisor", 4)),
            routing_backend=v.get("routing", "gossip"),
            snapshot_refresh_ms=int(v.get("snapshot_refresh_ms", 1000)),
            max_route_hops=int(v["max_route_hops"]) if "max_route_hops" in v else None,
            root_index=int(v["root_index"]) if "root_index" in v else None,
            duration_ms=int(v.get("duration_ms", 30000)),
            mobility_tick_ms=int(v.get("mobility_tick_ms", 100)),
        )
    except KeyError as exc:
        raise ConfigError(f"missing required key {exc.args[0]!r}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def parse_config(path: Path) -> RunManifest:
    """Read an INI scenario file into an expanded, validated manifest."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if "scenario" not in parser:
        raise ConfigError(f"{path}: missing [scenario] section")
    base = dict(parser["scenario"])
    try:
        replications = int(base.pop("replications", "1"))
        base_seed = int(base.pop("seed", "0"))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if replications < 1:
        raise ConfigError("replications must be at least 1")

    cell_sections = [s for s in parser.sections() if s.startswith("cell.")]
    cells: list[ScenarioConfig] = []
    if cell_sections:
        for section in cell_sections:
            raw = dict(base)
            raw.update(dict(parser[section]))
            cells.extend(_cell_configs(section.removeprefix("cell."), raw))
    else:
        cells.extend(_cell_configs("scenario", base))
    return RunManifest(tuple(cells), replications, base_seed)


def _run_one(job: tuple[ScenarioConfig, int]) -> tuple[dict, str]:
    config, seed = job
    trace, report = sim_mod.run(replace(config, seed=seed))
    return report.to_dict(), trace.to_ndjson()


def _cmd_validate(args: argparse.Namespace) -> int:
    try:
        manifest = parse_config(Path(args.config))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{args.config}: {len(manifest.cells)} cell(s), "
          f"{manifest.replications} replication(s) each, base seed {manifest.base_seed}")
    for cfg in manifest.cells:
        print(f"  {cfg.name}: nodes={cfg.node_count} area={cfg.area.width:g}x{cfg.area.height:g} "
              f"mobility={cfg.mobility_model} speed={cfg.speed_mps:g} routing={cfg.routing_backend} "
              f"function={cfg.function.value}")
    return EXIT_OK


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        manifest = parse_config(Path(args.config))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    base_seed = args.seed if args.seed is not None else manifest.base_seed
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.traces:
        (out_dir / "traces").mkdir(exist_ok=True)

    jobs: list[tuple[ScenarioConfig, int]] = []
    for cfg in manifest.cells:
        for rep in range(manifest.replications):
            jobs.append((cfg, base_seed + rep))

    rows: list[metrics_mod.SummaryRow] = []
    reports_path = out_dir / "runs.ndjson"
    try:
        if args.parallel > 1:
            with multiprocessing.Pool(args.parallel) as pool:
                results = pool.map(_run_one, jobs)
        else:
            results = [_run_one(job) for job in jobs]
    except KeyboardInterrupt:
        print("interrupted; flushing partial results", file=sys.stderr)
        _flush(rows, out_dir)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - surfaced as the exit diagnostic
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    with open(reports_path, "w", encoding="utf-8") as fh:
        cursor = 0
        for cell_index, cfg in enumerate(manifest.cells):
            cell_reports = []
            for rep in range(manifest.replications):
                report_dict, trace_text = results[cursor]
                cursor += 1
                record = {"cell": cfg.name, "replication": rep, "seed": base_seed + rep}
                record.update(report_dict)
                fh.write(json.dumps(record, separators=(",", ":")) + "\n")
                cell_reports.append(_report_from_dict(report_dict))
                if args.traces:
                    trace_name = f"cell{cell_index:02d}_rep{rep:03d}.ndjson"
                    (out_dir / "traces" / trace_name).write_text(trace_text, encoding="utf-8")
            rows.append(metrics_mod.make_summary_row(cfg, cell_reports))
    _flush(rows, out_dir)
    print(f"wrote {out_dir / 'summary.csv'} ({len(rows)} row(s), {len(jobs)} run(s))")
    return EXIT_OK


def _report_from_dict(d: dict) -> metrics_mod.MetricsReport:
    return metrics_mod.MetricsReport(
        convergence_time_ms=d["convergence_time_ms"],
        observations=d["observations"],
        node_count=d["node_count"],
        accuracy=d["accuracy"],
        packets_sent=d["packets_sent"],
        mean_packet_bytes=d["mean_packet_bytes"],
        packets_by_type=d.get("packets_by_type", {}),
        errors=d.get("errors", {}),
    )


def _flush(rows: list[metrics_mod.SummaryRow], out_dir: Path) -> None:
    metrics_mod.write_csv(rows, out_dir / "summary.csv")


def _cmd_replay(args: argparse.Namespace) -> int:
    try:
        trace = sim_mod.read_trace(args.trace)
        config = ScenarioConfig.from_dict(trace.meta)
        report = metrics_mod.reduce(trace, config)
    except (OSError, ValueError, KeyError) as exc:
        print(f"replay error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="manetmon",
        description="Run monitoring-protocol scenarios in the deterministic simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario config")
    p_run.add_argument("config", help="path to an INI scenario file")
    p_run.add_argument("--out", default="out", help="output directory (default: ./out)")
    p_run.add_argument("--seed", type=int, default=None, help="override the base seed")
    p_run.add_argument("--parallel", type=int, default=1, help="worker processes")
    p_run.add_argument("--traces", action="store_true", help="write per-run trace files")
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="check a scenario config and list its cells")
    p_val.add_argument("config", help="path to an INI scenario file")
    p_val.set_defaults(func=_cmd_validate)

    p_rep = sub.add_parser("replay", help="re-reduce metrics from a stored trace")
    p_rep.add_argument("trace", help="path to an NDJSON trace file")
    p_rep.set_defaults(func=_cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
