"""Node position processes over a bounded rectangle.

Two models: random waypoint (head to a uniform target, pick a new one on
arrival, zero pause) and random walk (straight legs of fixed duration with
uniformly redrawn headings, reflecting off the walls).  Steps are pure
functions so trajectories replay exactly from a seed.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, replace

#: Seconds a random-walk leg lasts before a new heading is drawn.
WALK_LEG_SECONDS = 2.0


@dataclass(frozen=True)
class Area:
    width: float
    height: float

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("area sides must be positive")

    def contains(self, x: float, y: float) -> bool:
        return 0.0 <= x <= self.width and 0.0 <= y <= self.height

    def random_point(self, rng: random.Random) -> tuple[float, float]:
        return rng.uniform(0.0, self.width), rng.uniform(0.0, self.height)


@dataclass(frozen=True)
class WaypointState:
    position: tuple[float, float]
    target: tuple[float, float]
    speed: float


@dataclass(frozen=True)
class WalkState:
    position: tuple[float, float]
    heading: float
    leg_remaining_s: float
    speed: float


def start_waypoint(
    position: tuple[float, float], speed: float, area: Area, rng: random.Random
) -> WaypointState:
    return WaypointState(position, area.random_point(rng), speed)


def start_walk(
    position: tuple[float, float], speed: float, rng: random.Random
) -> WalkState:
    return WalkState(position, rng.uniform(0.0, math.tau), WALK_LEG_SECONDS, speed)


def waypoint_step(
    m: WaypointState, dt: float, area: Area, rng: random.Random
) -> WaypointState:
    """Advance toward the target by speed*dt, redrawing targets on arrival."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x, y = m.position
    tx, ty = m.target
    budget = m.speed * dt
    while budget > 0:
        dist = math.hypot(tx - x, ty - y)
        if dist <= budget:
            x, y = tx, ty
            budget -= dist
            tx, ty = area.random_point(rng)
            if (tx, ty) == (x, y):
                continue
        else:
            x += (tx - x) / dist * budget
            y += (ty - y) / dist * budget
            break
    return WaypointState((x, y), (tx, ty), m.speed)


def walk_step(m: WalkState, dt: float, area: Area, rng: random.Random) -> WalkState:
    """Advance along the heading, bouncing off walls; redraw heading per leg."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    heading = m.heading
    remaining = m.leg_remaining_s
    if remaining <= 0:
        heading = rng.uniform(0.0, math.tau)
        remaining = WALK_LEG_SECONDS
    x, y = m.position
    hx, hy = math.cos(heading), math.sin(heading)
    x += hx * m.speed * dt
    y += hy * m.speed * dt
    # Mirror back inside on boundary contact, negating that heading component.
    if x < 0.0:
        x, hx = -x, -hx
    elif x > area.width:
        x, hx = 2.0 * area.width - x, -hx
    if y < 0.0:
        y, hy = -y, -hy
    elif y > area.height:
        y, hy = 2.0 * area.height - y, -hy
    # One reflection per tick keeps a point inside as long as a step never
    # exceeds a full side; clamp covers the degenerate huge-step case.
    x = min(max(x, 0.0), area.width)
    y = min(max(y, 0.0), area.height)
    return WalkState((x, y), math.atan2(hy, hx), remaining - dt, m.speed)
