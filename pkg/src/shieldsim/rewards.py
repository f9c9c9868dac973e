"""Per-frame reward with full term breakdown.

Six terms: collision (event frames only, speed-weighted), velocity band,
acceleration comfort, intersection blocking, shield usage, and closing-up
distance. The frame-rate divisor normalizes the non-event terms so their
per-second sum is frame-rate independent.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import RewardParams


@dataclass(frozen=True)
class RewardInputs:
    v: float  # agent speed, m/s
    a_agent: float  # acceleration proposed by the policy
    a_shield: float  # acceleration actually executed
    on_intersection: bool
    collision: bool
    near_collision: bool
    d_la: float
    d_free: float

    def validate(self) -> None:
        if not 0.0 <= self.d_free <= self.d_la:
            raise ValueError(f"d_free {self.d_free} outside [0, {self.d_la}]")


@dataclass(frozen=True)
class RewardBreakdown:
    r_collision: float
    r_velocity: float
    r_acceleration: float
    r_intersection: float
    r_shield: float
    r_distance: float
    total: float

    def terms(self) -> list[float]:
        return [self.r_collision, self.r_velocity, self.r_acceleration,
                self.r_intersection, self.r_shield, self.r_distance]


def compute_reward(inp: RewardInputs, p: RewardParams) -> RewardBreakdown:
    inp.validate()
    v = inp.v
    event = inp.collision or inp.near_collision
    r_collision = (-p.k_c * abs(v) - p.k_c_abs) if event else 0.0

    if v > p.v_upper:
        r_velocity = -p.k_v_upper * abs(v - p.v_upper)
    else:
        r_velocity = p.k_v_lower * abs(v)

    a_exec = inp.a_shield
    r_acceleration = -p.k_a * (2.0 ** abs(a_exec) - 1.0)

    r_intersection = -p.k_intersection if inp.on_intersection else 0.0

    # magnitude, not the paper's literal signed value: a signed -7 would
    # reward emergency braking, contradicting its stated purpose
    if inp.a_shield < inp.a_agent:
        r_shield = -p.k_shield * abs(inp.a_shield)
        r_distance = 0.0
    else:
        r_shield = 0.0
        if v > 0.0:
            r_distance = p.k_dist * (inp.d_la - inp.d_free) / inp.d_la
        else:
            r_distance = 0.0

    total = r_collision + (r_velocity + r_acceleration + r_intersection
                           + r_shield + r_distance) / p.fps
    return RewardBreakdown(r_collision, r_velocity, r_acceleration,
                           r_intersection, r_shield, r_distance, total)
