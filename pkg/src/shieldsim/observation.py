"""Ego-centric route-grid observation: per-cell time-to-occupancy and
time-to-vacancy over the agent's route ahead, intersection markers, and a
right-of-way flag, with assumed standing vehicles injected at concealed
road patches.

Everything is computed in route-relative arclength, so the output is
invariant under rigid transforms of the whole scene.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .config import IERConfig
from .rules import (Approach, has_priority_other, phantom_incoming,
                    real_vehicle_incoming, worst_case_arrival)
from .visibility import VisibilityMask

PHANTOM_LENGTH = 4.5  # assumed body length of a hidden vehicle


class EncodingError(ValueError):
    pass


def occupancy_times(s_start: float, s_end: float, v: float) -> tuple[float, float]:
    """Raw (time-to-occupancy, time-to-vacancy) for a road user at speed v
    whose front is s_start away from a section start and whose rear clears
    the section after covering s_end.

    v = 0 yields +inf (clamped downstream); a stationary occupant already at
    the section (s_start <= 0) occupies it now, so its tto is 0.
    """
    if s_start < 0.0 and s_start < -1e-9:
        raise EncodingError(f"negative s_start {s_start}")
    if s_end < s_start:
        raise EncodingError("s_end must be >= s_start")
    if v < 0.0:
        raise EncodingError("negative velocity")
    if v == 0.0:
        return (0.0 if s_start <= 0.0 else math.inf, math.inf)
    return (max(0.0, s_start) / v, s_end / v)


def time_to_intersection(d_c: float, v: float, cap: float = math.inf) -> float:
    """d_c / v, clamped at `cap`; v = 0 maps to the clamp value."""
    if d_c < 0.0:
        raise EncodingError(f"negative distance {d_c}")
    if v < 0.0:
        raise EncodingError("negative velocity")
    if v == 0.0:
        return cap
    return min(d_c / v, cap)


@dataclass(frozen=True)
class PhantomVehicle:
    """Worst-case assumed vehicle at the start of a concealed patch."""
    lane_id: str
    offset: float  # lane arclength of the concealment boundary
    velocity: float = 0.0
    accel: float = 3.0  # launches at the background a_max


@dataclass
class Hazard:
    kind: str  # "obstruction" | "crossing" | "pedestrian"
    dist: float  # route distance from the ego front, m
    priority_other: bool
    entity: object = None


@dataclass
class EncodeAux:
    """Byproducts of one encoding pass shared by the shield, the reward, and
    the episode logger (derived from the world, not part of the wire format).
    """
    d_free: float
    on_intersection: bool
    hazards: list[Hazard] = field(default_factory=list)
    phantoms: list[PhantomVehicle] = field(default_factory=list)
    spans: list[tuple[int, int, str, str]] = field(default_factory=list)

    def nearest_prioritized(self) -> Hazard | None:
        best = None
        for h in self.hazards:
            if h.priority_other and (best is None or h.dist < best.dist):
                best = h
        return best


@dataclass
class IERObservation:
    tto: list[float]
    ttv: list[float]
    mark: list[float]  # 0 none, 0.5 intersection end, 1.0 intersection start
    priority: list[float]  # 0/1 per cell
    ego_v_norm: float

    def to_vector(self) -> list[float]:
        return self.tto + self.ttv + self.mark + self.priority + [self.ego_v_norm]

    @property
    def n_cells(self) -> int:
        return len(self.tto)


def incoming_vehicles(world, intersection, cfg: IERConfig, phantoms=()) -> list:
    """Entities satisfying the arrival filter for this intersection: within
    the monitoring range and arriving within the horizon. Returns vehicle ids
    plus any supplied phantoms that pass their worst-case filter.
    """
    out = []
    for veh in world.vehicles:
        cp = veh.next_conn_piece()
        if cp is None or cp.isec != intersection.id:
            continue
        conn = intersection.connectors[cp.key]
        zones = intersection.conflicts_by_conn.get(cp.key, ())
        entry = min((z.offsets[cp.key][0] for _, z in zones), default=0.0)
        d_c = cp.start - veh.s + entry
        if d_c <= 0.0 or real_vehicle_incoming(max(d_c, 0.0), veh.v, cfg):
            if d_c > -(conn.length + veh.length):
                out.append(veh.id)
    a_max = world.config.idm.a_max
    v_cap = world.config.idm.v0
    for ph in phantoms:
        lane = world.network.lanes[ph.lane_id]
        if lane.node_to != intersection.id:
            continue
        d_c = lane.length - ph.offset
        if phantom_incoming(d_c, cfg, a_max, v_cap):
            out.append(ph)
    return out


def inject_phantoms(world, mask: VisibilityMask, ego) -> list[PhantomVehicle]:
    """One assumed standing vehicle per conflicting lane that has a concealed
    stretch within the lookahead, placed at the concealed point nearest the
    conflict zone (seen from upstream)."""
    phantoms = []
    for lane_id in sorted(_conflicting_lanes(world, ego)):
        lane = world.network.lanes[lane_id]
        concealed = mask.concealed(lane_id, lane.length)
        if not concealed:
            continue
        # nearest concealed point to the lane end (which feeds the conflict)
        best = max(b for _, b in concealed)
        phantoms.append(PhantomVehicle(lane_id=lane_id, offset=best,
                                       accel=world.config.idm.a_max))
    return phantoms


def first_concealed_patch(mask: VisibilityMask, ego):
    """Nearest concealed interval start on a conflicting lane, ordered by the
    path distance from the ego to the conflict it feeds; None if fully visible."""
    world = mask.world
    best = None
    for lane_id, d_conflict in _conflicting_lanes(world, ego).items():
        lane = world.network.lanes[lane_id]
        concealed = mask.concealed(lane_id, lane.length)
        if not concealed:
            continue
        start = max(b for _, b in concealed)
        if best is None or d_conflict < best[0]:
            best = (d_conflict, lane_id, start)
    if best is None:
        return None
    return (best[1], best[2])


def _conflicting_lanes(world, ego) -> dict[str, float]:
    """Approach lanes feeding connectors that conflict with the ego route
    within the lookahead, mapped to the ego route distance of the conflict."""
    cfg = world.config.encoder
    out: dict[str, float] = {}
    pieces = ego.route.pieces
    i = ego.piece_i
    while i < len(pieces):
        p = pieces[i]
        rel = p.start - ego.s
        if rel > cfg.d_la:
            break
        if p.kind == "conn":
            isec = world.network.intersections[p.isec]
            for other_key, zone in isec.conflicts_by_conn.get(p.key, ()):
                other = isec.connectors[other_key]
                d = p.start + zone.offsets[p.key][0] - ego.s
                lane_id = other.in_lane
                if lane_id not in out or d < out[lane_id]:
                    out[lane_id] = d
        i += 1
    return out


# --------------------------------------------------------------------------
# the encoder
# --------------------------------------------------------------------------

def encode(world, ego, cfg: IERConfig | None = None) -> IERObservation:
    obs, _ = encode_full(world, ego, cfg)
    return obs


class _Scan:
    """Mutable state threaded through one encoding pass."""
    __slots__ = ("tto", "ttv", "nearest", "cell", "n", "d_la")

    def __init__(self, n, cell, d_la):
        self.tto = [math.inf] * n
        self.ttv = [math.inf] * n
        self.nearest = math.inf  # nearest present body on the route corridor
        self.cell = cell
        self.n = n
        self.d_la = d_la

    def cover(self, lo: float, hi: float, pair_tto: float, pair_ttv: float) -> None:
        # paint cells intersecting [lo, hi) with this occupant's time pair,
        # keeping the earliest-arriving occupant per cell
        if hi <= 0.0 or lo >= self.d_la:
            return
        cell = self.cell
        k0 = int(lo / cell) if lo > 0.0 else 0
        k1 = min(self.n - 1, int((hi - 1e-12) / cell))
        tto, ttv = self.tto, self.ttv
        for k in range(k0, k1 + 1):
            if pair_tto < tto[k]:
                tto[k] = pair_tto
                ttv[k] = pair_ttv


def encode_full(world, ego, cfg: IERConfig | None = None
                ) -> tuple[IERObservation, EncodeAux]:
    """One pass over the route ahead: occupant sweeps fill the (tto, ttv)
    cells, intersection spans set markers and the right-of-way flag, and the
    shield/reward byproducts fall out of the same scan."""
    cfg = cfg or world.config.encoder
    n = cfg.n_cells
    cell = cfg.cell_length
    t_max = cfg.t_max
    sc = _Scan(n, cell, cfg.d_la)
    mark = [0.0] * n
    prio = [0.0] * n
    aux = EncodeAux(d_free=cfg.d_la, on_intersection=False)

    occ = world.piece_occ
    net = world.network
    route = ego.route
    pieces = route.pieces
    ego_s = ego.s
    d_la = cfg.d_la

    i = ego.piece_i
    while i < len(pieces):
        p = pieces[i]
        rel_start = p.start - ego_s
        if rel_start > d_la:
            break
        # same-route occupants ahead (leaders and merged traffic)
        s_in_lo = ego_s - p.start if i == ego.piece_i else -1e9
        for s_in, o in occ.get(p.key, ()):
            if o is ego or s_in <= s_in_lo:
                continue
            front_rel = p.start + s_in - ego_s
            rear_rel = front_rel - o.length
            share_end = _shared_end(route, i, o) - ego_s
            lo = max(0.0, rear_rel)
            if rear_rel < sc.nearest:
                sc.nearest = rear_rel
            if share_end <= lo:
                # diverging straddler: its body still blocks my piece now
                end_rel = p.start + p.length - ego_s
                hi = min(front_rel, end_rel)
                if hi > lo:
                    t_v = (hi - rear_rel) / o.v if o.v > 0.0 else math.inf
                    sc.cover(lo, hi, 0.0, t_v)
            elif o.v <= 0.0:
                sc.cover(lo, min(front_rel, share_end), 0.0, math.inf)
            else:
                k0 = int(lo / cell) if lo > 0.0 else 0
                k1 = min(n - 1, int((min(share_end, d_la) - 1e-12) / cell))
                tto_l, ttv_l = sc.tto, sc.ttv
                for k in range(k0, k1 + 1):
                    c0 = k * cell
                    t_o = (c0 - front_rel) / o.v if c0 > front_rel else 0.0
                    if t_o < tto_l[k]:
                        tto_l[k] = t_o
                        ttv_l[k] = ((k + 1) * cell - rear_rel) / o.v

        if p.kind == "conn":
            _encode_intersection(world, ego, cfg, p, sc, aux, prio, mark)
        else:
            # pedestrians on crosswalk bands along this lane
            for s_cw, cw_id in world.lane_cws.get(p.key, ()):
                if cw_id not in world.crossing_cws:
                    continue
                rel_c = p.start + s_cw - ego_s
                cw = net.crosswalks[cw_id]
                band_lo = rel_c - cw.half_span - world.config.pedestrian.radius
                band_hi = rel_c + cw.half_span + world.config.pedestrian.radius
                if band_hi <= 0.0 or band_lo >= d_la:
                    continue
                lam_lane = cw.lane_lateral.get(p.key, 0.0)
                hit = _pedestrian_times(world, cw_id, cw, lam_lane)
                if hit is not None:
                    t_o, t_v, present = hit
                    sc.cover(max(0.0, band_lo), band_hi, t_o, t_v)
                    if present and band_lo < sc.nearest:
                        sc.nearest = band_lo
                # anyone on the zebra has the right of way, in-band or not
                aux.hazards.append(Hazard("pedestrian", max(0.0, band_lo), True))
        i += 1

    if sc.nearest < math.inf:
        d = max(0.0, min(sc.nearest, d_la))
        aux.d_free = d
        aux.hazards.append(Hazard("obstruction", d, True))

    # one assumed vehicle per conflicting lane
    if aux.phantoms:
        seen = {}
        for ph in aux.phantoms:
            old = seen.get(ph.lane_id)
            if old is None or ph.offset > old.offset:
                seen[ph.lane_id] = ph
        aux.phantoms = [seen[k] for k in sorted(seen)]

    norm_tto = [1.0 if math.isinf(t) else min(t, t_max) / t_max for t in sc.tto]
    norm_ttv = [1.0 if math.isinf(t) else min(t, t_max) / t_max for t in sc.ttv]
    v_upper = world.config.reward.v_upper
    obs = IERObservation(tto=norm_tto, ttv=norm_ttv, mark=mark, priority=prio,
                         ego_v_norm=ego.v / v_upper)
    return obs, aux


def _shared_end(route, piece_idx: int, other) -> float:
    """Absolute route arclength where `other`'s path diverges from ours."""
    my = route.pieces
    their = other.route.pieces
    j = other.piece_i
    m = 0
    end = my[piece_idx].start
    while (piece_idx + m < len(my) and j + m < len(their)
           and my[piece_idx + m].key == their[j + m].key):
        end = my[piece_idx + m].start + my[piece_idx + m].length
        m += 1
    return end


def _pedestrian_times(world, cw_id: str, cw, lam_lane: float):
    """(tto, ttv, present_now) for the earliest pedestrian movement through
    this lane's band of the crosswalk; None if nothing is crossing."""
    from .world import PedestrianState  # local import to avoid a cycle
    radius = world.config.pedestrian.radius
    width = 1.75 + radius
    best = None
    for ped in world.pedestrians:
        if ped.crosswalk != cw_id or ped.state != PedestrianState.CROSSING:
            continue
        lam = ped.lateral(cw.half_span)
        rate = ped.direction * ped.speed
        lo, hi = lam_lane - width, lam_lane + width
        if lo <= lam <= hi:
            t_o = 0.0
            t_v = ((hi - lam) / rate if rate > 0 else (lam - lo) / -rate) if rate else math.inf
            present = True
        elif rate > 0 and lam < lo:
            t_o = (lo - lam) / rate
            t_v = (hi - lam) / rate
            present = False
        elif rate < 0 and lam > hi:
            t_o = (lam - hi) / -rate
            t_v = (lam - lo) / -rate
            present = False
        else:
            continue  # moving away
        if best is None or t_o < best[0]:
            best = (t_o, t_v, present)
    return best


def _encode_intersection(world, ego, cfg, p, sc: _Scan, aux, prio, mark):
    """Crossing traffic, phantoms, markers and the right-of-way flag for one
    intersection span of the ego route."""
    net = world.network
    idm = world.config.idm
    ego_s = ego.s
    cell = sc.cell
    n = sc.n
    isec = net.intersections[p.isec]
    my_conn = isec.connectors[p.key]
    my_app = Approach(isec.id, my_conn.u_in, my_conn.turn)

    span_lo = p.start - ego_s
    span_hi = span_lo + p.length
    k_lo = max(0, int(span_lo / cell) if span_lo > 0 else 0)
    k_hi = min(n - 1, int((span_hi - 1e-12) / cell))
    in_grid = k_hi >= k_lo and span_hi > 0 and span_lo < cfg.d_la
    if in_grid:
        mark[k_hi] = 0.5
        mark[k_lo] = 1.0  # start wins on a single-cell span
        aux.spans.append((k_lo, k_hi, isec.id, p.key))
    if (span_lo <= 0.0 < span_hi + ego.length or
            (0.0 < span_lo <= 2.0 and ego.v < 0.1)):
        aux.on_intersection = True

    # the next arriving conflicting road user decides the per-cell priority
    # flag; hazards carry per-conflict-patch priority (the next arrival at
    # that particular patch)
    next_arrival = math.inf
    next_prio = False

    lane_in = net.lanes[my_conn.in_lane]
    if ego.route.pieces[ego.piece_i].key == my_conn.in_lane:
        s_obs = ego_s - (p.start - lane_in.length)
    elif span_lo <= 2.0:
        s_obs = lane_in.length  # inside or at the box: at-line vantage
    else:
        s_obs = 0.0  # far upstream: most conservative table sample

    for other_key, zone in isec.conflicts_by_conn.get(p.key, ()):
        e_mine, x_mine = zone.offsets[p.key]
        e_oth, x_oth = zone.offsets[other_key]
        other_conn = isec.connectors[other_key]
        zone_len_o = x_oth - e_oth
        z_lo = p.start + e_mine - ego_s
        z_hi = p.start + x_mine - ego_s
        if z_hi <= 0.0:
            continue  # ego already past this zone
        opp = Approach(isec.id, other_conn.u_in, other_conn.turn)
        o_prio = has_priority_other(my_app, opp)
        zone_arrival = math.inf
        zone_prio = False

        # real traffic on the conflicting path (approaching, inside, or still
        # clearing onto the exit lane)
        cands = []
        for d_e_o, o in world.registry.get((isec.id, other_key), ()):
            cands.append((d_e_o + e_oth, o))
        for s_in, o in world.piece_occ.get(other_conn.out_lane, ()):
            if s_in <= o.length + 3.5:
                cands.append((e_oth - other_conn.length - s_in, o))
        for d_zone, o in cands:
            if o is ego:
                continue
            rear_past = d_zone + zone_len_o + o.length
            if rear_past <= 0.0:
                continue  # already cleared
            pair = occupancy_times(max(0.0, d_zone), rear_past, o.v)
            sc.cover(max(0.0, z_lo), z_hi, pair[0], pair[1])
            if pair[0] == 0.0 and d_zone <= 0.0:
                # a body inside the conflict zone is a present obstruction
                if z_lo < sc.nearest:
                    sc.nearest = z_lo
            inc = d_zone <= 0.0 or real_vehicle_incoming(d_zone, o.v, cfg)
            if inc:
                arr = 0.0 if d_zone <= 0.0 else d_zone / max(o.v, 1e-9)
                # an entity that can no longer stop short of the zone owns it
                # even without right of way (it is about to be physically
                # there, like a slow merger the agent must not rear-end)
                committed = d_zone <= (o.v * o.v) / (2.0 * idm.b) + 0.5 * o.v + 1.5
                if arr < zone_arrival:
                    zone_arrival = arr
                    zone_prio = o_prio or committed

        # assumed standing vehicle on the concealed part of the approach
        if net.buildings:
            vis = world.sight.prefix(my_conn.in_lane, lane_in.length,
                                     min(s_obs, lane_in.length), other_conn.in_lane)
            d_ph = vis + e_oth
            if phantom_incoming(d_ph, cfg, idm.a_max, idm.v0):
                t_o = worst_case_arrival(d_ph, idm.a_max, idm.v0)
                t_v = worst_case_arrival(d_ph + zone_len_o + PHANTOM_LENGTH,
                                         idm.a_max, idm.v0)
                sc.cover(max(0.0, z_lo), z_hi, t_o, t_v)
                lane_o = net.lanes[other_conn.in_lane]
                aux.phantoms.append(PhantomVehicle(other_conn.in_lane,
                                                   lane_o.length - vis,
                                                   accel=idm.a_max))
                if t_o < zone_arrival:
                    zone_arrival = t_o
                    zone_prio = o_prio

        if math.isfinite(zone_arrival):
            aux.hazards.append(Hazard("crossing", max(0.0, z_lo), zone_prio))
            if zone_arrival < next_arrival:
                next_arrival = zone_arrival
                next_prio = zone_prio

    if next_prio and in_grid:
        for k in range(k_lo, k_hi + 1):
            prio[k] = 1.0
