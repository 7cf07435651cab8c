"""Accumulator algebra for the monitored functions.

Every function folds through the same ``(outcome, observations)`` pair that
travels on the wire.  Averages are carried as (mean, count) so the wire fields
map directly; ``combine`` re-weights when merging.  The algebra is associative
and commutative (up to float rounding), which is what makes the fold
independent of the aggregation tree's shape.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .wire import MonitorFunction


class EmptyAggregate(ValueError):
    """Finalizing an accumulator that folded no observations."""


@dataclass(frozen=True)
class AggState:
    """Accumulated outcome plus the number of observations folded into it."""

    outcome: float
    observations: int

    def __post_init__(self) -> None:
        if self.observations < 0:
            raise ValueError("observation count cannot be negative")


#: Identity element: combines as a no-op, never transmitted.
IDENTITY = AggState(0.0, 0)

_AVERAGES = frozenset({MonitorFunction.AVG_CPU, MonitorFunction.AVG_RAM})
_SUMS = frozenset({MonitorFunction.SUM, MonitorFunction.COUNT})


def local_observe(f: MonitorFunction, node_metric: float) -> AggState:
    """One node's own contribution: its metric value as a single observation.

    COUNT ignores the metric and contributes 1 (it counts nodes).
    """
    if not math.isfinite(node_metric):
        raise ValueError("node metric must be finite")
    if f is MonitorFunction.COUNT:
        return AggState(1.0, 1)
    return AggState(float(node_metric), 1)


def combine(f: MonitorFunction, a: AggState, b: AggState) -> AggState:
    """Merge two accumulators; observation counts always add."""
    if a.observations == 0:
        return b
    if b.observations == 0:
        return a
    total = a.observations + b.observations
    if f in _AVERAGES:
        outcome = (a.outcome * a.observations + b.outcome * b.observations) / total
    elif f in _SUMS:
        outcome = a.outcome + b.outcome
    elif f is MonitorFunction.MIN:
        outcome = min(a.outcome, b.outcome)
    elif f is MonitorFunction.MAX:
        outcome = max(a.outcome, b.outcome)
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"no combine rule for {f}")
    return AggState(outcome, total)


def combine_all(f: MonitorFunction, states) -> AggState:
    """Fold any iterable of accumulators, in the given order."""
    acc = IDENTITY
    for s in states:
        acc = combine(f, acc, s)
    return acc


def finalize(f: MonitorFunction, s: AggState) -> float:
    """Read out the final value; all kinds store their result directly."""
    if s.observations == 0:
        raise EmptyAggregate("no observations to finalize")
    return s.outcome
