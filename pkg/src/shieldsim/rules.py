"""Right-of-way rules and arrival-time predicates shared by the observation
encoder, the shield, and the background drivers (so they never disagree).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .config import IERConfig


@dataclass(frozen=True)
class Approach:
    """One road user's way through an intersection: approach direction
    (unit vector pointing into the intersection) plus intended turn."""
    intersection: str
    u_in: tuple[float, float]
    turn: str  # left | straight | right


class RuleError(ValueError):
    pass


def has_priority_other(ego: Approach, other: Approach, rules: str = "right-before-left") -> bool:
    """True iff `other` has right of way over `ego`.

    Uncontrolled-intersection rule set: right before left; turning traffic
    yields to oncoming traffic that goes straight or turns right. Pedestrians
    are handled outside this predicate (they always have priority on
    crosswalks); phantoms carry the priority of the lane they occupy and are
    evaluated through this same table.
    """
    if ego.intersection != other.intersection:
        raise RuleError("approaches reference different intersections")
    ex, ey = ego.u_in
    ox, oy = other.u_in
    d = ex * ox + ey * oy
    c = ex * oy - ey * ox
    if d < -0.7:  # oncoming arms
        return ego.turn == "left" and other.turn != "left"
    return c > 0.0  # other approaches from ego's right


def worst_case_arrival(d: float, a_max: float, v_cap: float, v0: float = 0.0) -> float:
    """Time to cover distance d starting at v0, accelerating at a_max,
    capped at v_cap. The standing-vehicle worst case uses v0 = 0."""
    if d <= 0.0:
        return 0.0
    if v0 >= v_cap:
        return d / v_cap
    t_cap = (v_cap - v0) / a_max
    d_cap = v0 * t_cap + 0.5 * a_max * t_cap * t_cap
    if d <= d_cap:
        return (math.sqrt(v0 * v0 + 2.0 * a_max * d) - v0) / a_max
    return t_cap + (d - d_cap) / v_cap


STOPPED_EPS = 0.3  # below this speed a real vehicle counts as stopped


def real_vehicle_incoming(d_c: float, v: float, cfg: IERConfig) -> bool:
    """The arrival filter for real vehicles: within monitoring range and
    arriving within the horizon at its current speed. Stopped vehicles
    never pass (their literal time-to-intersection is infinite)."""
    if d_c > cfg.monitor_range:
        return False
    if d_c <= 0.0:
        return True  # already at or inside the conflict area
    if v <= STOPPED_EPS:
        return False
    return d_c / v <= cfg.arrival_horizon


def phantom_incoming(d_c: float, cfg: IERConfig, a_max: float, v_cap: float) -> bool:
    """Phantoms are assumed standing vehicles that may launch at full
    acceleration, so their arrival filter uses the worst-case profile."""
    if d_c > cfg.monitor_range:
        return False
    return worst_case_arrival(d_c, a_max, v_cap) <= cfg.arrival_horizon
