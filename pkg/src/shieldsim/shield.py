"""Post-posed emergency-brake shield: checks the proposed acceleration each
frame and overrides it with the hard-brake action when the agent is inside
the stopping window of a prioritized conflict ahead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .config import ShieldConfig
from .observation import EncodeAux, encode_full

FRAME_DT = 1.0 / 24.0


def braking_distance(v: float, emergency_decel: float = 7.0,
                     dt: float = FRAME_DT) -> float:
    """Stopping distance from speed v under the emergency deceleration plus
    one frame of reaction travel (discrete-time actuation)."""
    if v < 0.0:
        raise ValueError("negative speed")
    return v * v / (2.0 * emergency_decel) + v * dt


@dataclass
class ShieldDecision:
    proposed_accel: float
    final_accel: float
    triggered: bool
    d_intersection: float  # distance to the nearest prioritized conflict point
    d_braking: float
    reason: str = ""


def shield_decision(world, aux: EncodeAux | None, proposed_accel: float,
                    cfg: ShieldConfig | None = None,
                    prev_margin: float | None = None) -> ShieldDecision:
    """Evaluate the trigger condition for the agent.

    `aux` is the byproduct of the current frame's observation pass (it is a
    pure function of the world); pass None to have it computed here. The
    shield never sees learner internals: its inputs are the world snapshot,
    the encoded hazards, and the proposed action.

    `prev_margin` is the previous frame's margin; if the whole window was
    skipped between two frames (margin >= threshold straight to < 0) while
    the priority condition holds, the shield still triggers.
    """
    cfg = cfg or world.config.shield
    ego = world.agent
    if aux is None:
        _, aux = encode_full(world, ego)
    d_brake = braking_distance(ego.v, cfg.emergency_decel, world.config.dt)

    nearest = aux.nearest_prioritized()
    if nearest is None:
        return ShieldDecision(proposed_accel, proposed_accel, False,
                              math.inf, d_brake, "no prioritized conflict")
    d_int = nearest.dist
    margin = d_int - d_brake
    in_window = 0.0 <= margin < cfg.d_threshold
    # a fast approach (or a creep past the line) can cross the window between
    # two evaluations; a prioritized sign change still triggers
    skipped = (prev_margin is not None and prev_margin >= 0.0 and margin < 0.0)
    if in_window or skipped:
        reason = (f"{nearest.kind} at {d_int:.2f} m, margin {margin:.2f}"
                  + (" (window skipped)" if skipped and not in_window else ""))
        return ShieldDecision(proposed_accel, -cfg.emergency_decel, True,
                              d_int, d_brake, reason)
    return ShieldDecision(proposed_accel, proposed_accel, False,
                          d_int, d_brake, "outside window")


def shield_margin(world, aux: EncodeAux, cfg: ShieldConfig | None = None) -> float | None:
    """Current margin (d_intersection - d_braking) or None without hazards."""
    cfg = cfg or world.config.shield
    nearest = aux.nearest_prioritized()
    if nearest is None:
        return None
    return nearest.dist - braking_distance(world.agent.v, cfg.emergency_decel,
                                           world.config.dt)
