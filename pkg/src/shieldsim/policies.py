"""Rule-based baseline policies and the policy registry.

Four baselines: a time-to-collision gate (occlusion-blind, unshielded), its
creeping variant for concealed intersections, a bang-bang accelerate-to-limit
policy that leans fully on the shield, and an IDM whose following distance is
read off the observation grid (so it also brakes for assumed hidden vehicles).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .observation import IERObservation, EncodeAux
from .rules import STOPPED_EPS
from .visibility import point_visible

ACTIONS = (-7.0, -3.0, -1.5, 0.0, 1.5, 3.0)
EMERGENCY_INDEX = 0
IDX_BRAKE = 1  # -3
IDX_HOLD = 3  # 0
IDX_ACCEL = 5  # +3

POLICY_NAMES = ("ttc", "ttc-creep", "ier-acc", "ier-idm", "external")


def action_value(index: int) -> float:
    if not 0 <= index < len(ACTIONS):
        raise ValueError(f"action index {index} out of range")
    return ACTIONS[index]


def quantize_below(a: float) -> int:
    """Largest discrete action not exceeding a (conservative rounding)."""
    best = EMERGENCY_INDEX
    for i, val in enumerate(ACTIONS):
        if val <= a:
            best = i
    return best


@dataclass
class PolicyContext:
    """Read-only view handed to a policy each frame."""
    world: object
    ego: object
    obs: IERObservation
    aux: EncodeAux
    rng: np.random.Generator


class BasePolicy:
    name = "base"

    def reset(self, seed: int | None = None) -> None:
        pass

    def act(self, ctx: PolicyContext) -> int:
        raise NotImplementedError


class AccPolicy(BasePolicy):
    """Accelerate at +3 below the speed limit, else coast; safety is entirely
    the shield's job."""
    name = "ier-acc"

    def act(self, ctx: PolicyContext) -> int:
        v_upper = ctx.world.config.reward.v_upper
        v = ctx.obs.ego_v_norm * v_upper
        return IDX_ACCEL if v < v_upper else IDX_HOLD


class IdmObsPolicy(BasePolicy):
    """IDM car following whose lead distance comes straight from the
    observation grid: the first currently occupied cell, or the first
    intersection cell flagged with conflicting right of way (which is how the
    assumed hidden vehicles enter the braking logic). Lead speed is inferred
    from the occupied-cell displacement between frames, conservatively 0 when
    unknown."""
    name = "ier-idm"

    def __init__(self):
        self._prev_gap = None
        self._est_hist: list[float] = []

    def reset(self, seed: int | None = None) -> None:
        self._prev_gap = None
        self._est_hist = []

    def act(self, ctx: PolicyContext) -> int:
        cfg = ctx.world.config
        idm = dataclasses.replace(cfg.idm, a_max=cfg.policy.idm_a_max,
                                  b=cfg.policy.idm_b)
        enc = cfg.encoder
        cell = enc.cell_length
        obs = ctx.obs
        v = obs.ego_v_norm * cfg.reward.v_upper

        gap_occ = None
        for k, t in enumerate(obs.tto):
            if t == 0.0:
                gap_occ = k * cell
                break
        gap_prio = None
        for k, flag in enumerate(obs.priority):
            if flag == 1.0:
                gap_prio = k * cell
                break

        # lead-speed estimate from cell displacement between frames
        v_lead = 0.0
        if gap_occ is not None:
            if self._prev_gap is not None and abs(gap_occ - self._prev_gap) < 8.0:
                est = (gap_occ - self._prev_gap) * cfg.fps + v
                self._est_hist.append(min(max(est, 0.0), idm.v0))
                if len(self._est_hist) > 5:
                    self._est_hist.pop(0)
                v_lead = sorted(self._est_hist)[len(self._est_hist) // 2]
            else:
                self._est_hist = []
            self._prev_gap = gap_occ
        else:
            self._prev_gap = None
            self._est_hist = []

        a = idm.a_max * (1.0 - (v / idm.v0) ** idm.delta)
        for gap, vl in ((gap_occ, v_lead), (gap_prio, 0.0)):
            if gap is None:
                continue
            g = max(gap, 0.3)
            s_star = idm.s0 + v * idm.T + v * (v - vl) / (2.0 * math.sqrt(idm.a_max * idm.b))
            a = min(a, idm.a_max * (1.0 - (v / idm.v0) ** idm.delta - (s_star / g) ** 2))
        a = max(a, -7.0)
        return quantize_below(a)


class TTCPolicy(BasePolicy):
    """Gate on the minimum time-to-collision against visible conflicting
    entities; blind to concealment (no assumed vehicles), and run unshielded.
    """
    name = "ttc"

    def act(self, ctx: PolicyContext) -> int:
        p = ctx.world.config.policy
        ttc = self.min_ttc(ctx)
        v = ctx.ego.v
        v_upper = ctx.world.config.reward.v_upper
        if ttc < p.tau_brake:
            return IDX_BRAKE
        if ttc <= p.tau_go:
            return IDX_HOLD
        return IDX_ACCEL if v < v_upper else IDX_HOLD

    def min_ttc(self, ctx: PolicyContext) -> float:
        world = ctx.world
        ego = ctx.ego
        best = math.inf
        # leader: same-corridor body ahead
        from .world import nearest_obstruction
        gap, closing = nearest_obstruction(world, ego, horizon=80.0)
        if gap is not None and closing > 0.0:
            best = min(best, max(gap, 0.0) / closing)
        # crossing traffic: occupancy-window overlap at current speeds
        v_me = ego.v
        pieces = ego.route.pieces
        i = ego.piece_i
        ego_s = ego.s
        buildings = world.network.buildings
        x0, y0, _, _ = ego.route.pos_at(ego_s)
        while i < len(pieces):
            p_ = pieces[i]
            if p_.start - ego_s > 80.0:
                break
            if p_.kind == "conn":
                isec = world.network.intersections[p_.isec]
                for other_key, zone in isec.conflicts_by_conn.get(p_.key, ()):
                    e_m, x_m = zone.offsets[p_.key]
                    e_o, x_o = zone.offsets[other_key]
                    z_lo = p_.start + e_m - ego_s
                    z_hi = p_.start + x_m - ego_s
                    if z_hi <= 0.0:
                        continue
                    if v_me <= STOPPED_EPS:
                        continue  # no predicted collision while standing
                    t_in_me = max(0.0, z_lo) / v_me
                    t_out_me = (z_hi + ego.length) / v_me
                    for d_e_o, o in world.registry.get((isec.id, other_key), ()):
                        if o is ego:
                            continue
                        d_zone = d_e_o + e_o
                        rear_past = d_zone + (x_o - e_o) + o.length
                        if rear_past <= 0.0:
                            continue
                        if o.v <= STOPPED_EPS:
                            if d_zone > 0.0:
                                continue  # stopped short of the zone
                            t_in_o, t_out_o = 0.0, math.inf
                        else:
                            t_in_o = max(0.0, d_zone) / o.v
                            t_out_o = rear_past / o.v
                        if t_in_me <= t_out_o and t_in_o <= t_out_me:
                            ox, oy, _, _ = o.route.pos_at(o.s)
                            if point_visible((x0, y0), (ox, oy), buildings):
                                best = min(best, max(t_in_me, t_in_o))
            else:
                best = min(best, self._ped_ttc(ctx, p_, ego_s, v_me, (x0, y0)))
            i += 1
        return best

    def _ped_ttc(self, ctx, piece, ego_s, v_me, origin) -> float:
        from .world import PedestrianState
        world = ctx.world
        best = math.inf
        if v_me <= STOPPED_EPS:
            return best
        for s_cw, cw_id in world.lane_cws.get(piece.key, ()):
            cw = world.network.crosswalks[cw_id]
            rel_c = piece.start + s_cw - ego_s
            band_lo = rel_c - cw.half_span
            band_hi = rel_c + cw.half_span
            if band_hi <= 0.0:
                continue
            lam_lane = cw.lane_lateral.get(piece.key, 0.0)
            width = 1.75 + world.config.pedestrian.radius
            t_in_me = max(0.0, band_lo) / v_me
            t_out_me = (band_hi + ctx.ego.length) / v_me
            for ped in world.pedestrians:
                if ped.crosswalk != cw_id or ped.state != PedestrianState.CROSSING:
                    continue
                lam = ped.lateral(cw.half_span)
                rate = ped.direction * ped.speed
                lo, hi = lam_lane - width, lam_lane + width
                if lo <= lam <= hi:
                    t_in_o, t_out_o = 0.0, ((hi - lam) / rate if rate > 0
                                            else (lam - lo) / -rate)
                elif rate > 0 and lam < lo:
                    t_in_o, t_out_o = (lo - lam) / rate, (hi - lam) / rate
                elif rate < 0 and lam > hi:
                    t_in_o, t_out_o = (lam - hi) / -rate, (lam - lo) / -rate
                else:
                    continue
                if t_in_me <= t_out_o and t_in_o <= t_out_me:
                    if point_visible(origin, ped.position(cw),
                                     world.network.buildings):
                        best = min(best, max(t_in_me, t_in_o))
        return best


class TTCCreepPolicy(TTCPolicy):
    """TTC gating everywhere, plus a crawl cap near intersection entries whose
    conflicting approaches are partly concealed, released once they are fully
    visible within the monitoring range."""
    name = "ttc-creep"

    def act(self, ctx: PolicyContext) -> int:
        base = super().act(ctx)
        world = ctx.world
        ego = ctx.ego
        p = world.config.policy
        cp = ego.next_conn_piece()
        if cp is None:
            return base
        d_entry = cp.start - ego.s
        v = ego.v
        # engage early enough that the speed is already at the crawl cap when
        # entering the creep zone (comfortable deceleration run-up)
        b = world.config.idm.b
        run_up = max(0.0, (v * v - p.v_creep * p.v_creep) / (2.0 * b))
        if not -1.0 < d_entry <= p.d_creep + run_up:
            return base
        if not self._concealed_here(world, ego, cp):
            return base
        dt = world.config.dt
        if d_entry > p.d_creep:
            cap_a = -b if v > p.v_creep else ACTIONS[base]
        else:
            cap_a = (p.v_creep - v) / dt
        idx = quantize_below(min(ACTIONS[base], cap_a))
        return idx

    def _concealed_here(self, world, ego, cp) -> bool:
        net = world.network
        if not net.buildings:
            return False
        isec = net.intersections[cp.isec]
        conn = isec.connectors[cp.key]
        lane_in = net.lanes[conn.in_lane]
        on_lane = ego.route.pieces[ego.piece_i].key == conn.in_lane
        s_obs = ego.s - (cp.start - lane_in.length) if on_lane else lane_in.length
        need = world.config.encoder.monitor_range
        for other_key, _zone in isec.conflicts_by_conn.get(cp.key, ()):
            other = isec.connectors[other_key]
            vis = world.sight.prefix(conn.in_lane, lane_in.length,
                                     min(s_obs, lane_in.length), other.in_lane)
            lane_o = net.lanes[other.in_lane]
            if vis < min(need, lane_o.length) - 1e-6:
                return True
        return False


class ExternalPolicy(BasePolicy):
    """Placeholder for protocol-driven agents; never selects actions locally."""
    name = "external"

    def act(self, ctx: PolicyContext) -> int:
        raise RuntimeError("external policy acts through the environment protocol")


_REGISTRY = {
    "ttc": TTCPolicy,
    "ttc-creep": TTCCreepPolicy,
    "ier-acc": AccPolicy,
    "ier-idm": IdmObsPolicy,
    "external": ExternalPolicy,
}

# which baselines run behind the shield: the observation-based ones do,
# the TTC pair is evaluated raw (their crash rates are the point)
SHIELDED = {"ier-acc": True, "ier-idm": True, "ttc": False, "ttc-creep": False,
            "external": True}


def make_policy(name: str) -> BasePolicy:
    if name not in _REGISTRY:
        raise ValueError(f"unknown policy {name!r}; choose from {sorted(_REGISTRY)}")
    return _REGISTRY[name]()


def policy_is_shielded(name: str) -> bool:
    return SHIELDED.get(name, True)
