"""Discrete-time traffic world: background IDM drivers with right-of-way and
occlusion caution, crossing pedestrians, collision detection, and the episode
step loop at a fixed frame rate.

The agent vehicle is advanced with an externally supplied acceleration (the
post-shield action); everything else follows rule-based behavior. A world is
owned by one episode runner; all randomness flows through world.rng.
"""

from __future__ import annotations

import hashlib
import math
from array import array
from dataclasses import dataclass, field

import numpy as np

from .config import SimConfig
from .geometry import rect_corners, convex_overlap
from .network import RoadNetwork, Route, sample_route
from .rules import (Approach, STOPPED_EPS, has_priority_other,
                    phantom_incoming, real_vehicle_incoming)
from .visibility import SightTables

DECEL_LIMIT = 7.0  # simulation-wide hard deceleration bound, m/s^2
REG_RANGE = 75.0  # vehicles register with an intersection within this range
LOOK_AHEAD = 75.0  # driver constraint scan horizon
BLIND_CAP = 4.0  # speed cap near a concealed entry without priority conflict
CREEP_SPEED = 1.2  # nose-out speed after waiting at a phantom-blocked line
REACT_FRAMES = 12  # background yield decisions refresh every ~0.5 s


class SpawnError(RuntimeError):
    """The network could not host the drawn entity count without overlap."""


class SimulationError(RuntimeError):
    pass


def idm_acceleration(v: float, v_lead: float, gap: float, p) -> float:
    """Intelligent-Driver-Model acceleration.

    Free road is encoded as gap = +inf (v_lead is then irrelevant). The
    result is clamped below at the simulation-wide -7 m/s^2 bound.
    """
    if not math.isinf(gap) and gap <= 0.0:
        raise ValueError(f"gap must be positive (got {gap}); collision handling is the caller's job")
    s_star = p.s0 + v * p.T + v * (v - v_lead) / (2.0 * math.sqrt(p.a_max * p.b))
    a = p.a_max * (1.0 - (v / p.v0) ** p.delta - (s_star / gap) ** 2)
    return max(a, -DECEL_LIMIT)


class _IdmConsts:
    """Per-config IDM constants hoisted out of the per-vehicle hot loop."""
    __slots__ = ("v0", "T", "a_max", "b", "s0", "delta", "inv_v0",
                 "half_inv_sqrt_ab", "delta4")

    def __init__(self, p):
        self.v0 = p.v0
        self.T = p.T
        self.a_max = p.a_max
        self.b = p.b
        self.s0 = p.s0
        self.delta = p.delta
        self.inv_v0 = 1.0 / p.v0
        self.half_inv_sqrt_ab = 0.5 / math.sqrt(p.a_max * p.b)
        self.delta4 = p.delta == 4.0


def _idm_accel_fast(v, v_lead, gap, c: "_IdmConsts", v0):
    # hot-path variant: no validation, explicit desired speed
    s_star = c.s0 + v * c.T + v * (v - v_lead) * c.half_inv_sqrt_ab
    if gap < 0.05:
        gap = 0.05
    x = v / v0
    if c.delta4:
        x2 = x * x
        free = x2 * x2
    else:
        free = x ** c.delta
    q = s_star / gap
    a = c.a_max * (1.0 - free - q * q)
    return a if a > -DECEL_LIMIT else -DECEL_LIMIT


class VehicleState:
    __slots__ = ("id", "route", "s", "v", "a", "length", "width", "is_agent",
                 "piece_i", "conn_ptr", "yield_until", "yield_stop", "yield_kind",
                 "blind_cap", "wait_since", "arrive_frame")

    def __init__(self, vid: int, route: Route, s: float, v: float,
                 length: float, width: float, is_agent: bool = False):
        self.id = vid
        self.route = route
        self.s = s  # front-bumper arclength along the route
        self.v = v
        self.a = 0.0
        self.length = length
        self.width = width
        self.is_agent = is_agent
        self.piece_i = route.piece_index_at(s)
        self.conn_ptr = 0
        self.yield_until = -1
        self.yield_stop = False
        self.yield_kind = ""
        self.blind_cap = math.inf
        self.wait_since = -1
        self.arrive_frame = -1
        self._sync_conn_ptr()

    def _sync_conn_ptr(self):
        conns = self.route.conn_indices
        p = self.conn_ptr
        while p < len(conns) and conns[p] < self.piece_i:
            p += 1
        self.conn_ptr = p

    def next_conn_piece(self):
        conns = self.route.conn_indices
        if self.conn_ptr < len(conns):
            return self.route.pieces[conns[self.conn_ptr]]
        return None

    def pose(self):
        """(x, y, ux, uy) of the vehicle center."""
        sc = self.s - self.length * 0.5
        route = self.route
        i = route.piece_index_at(sc, self.piece_i)
        p = route.pieces[i]
        return p.poly.point_at(sc - p.start)

    def footprint(self):
        x, y, ux, uy = self.pose()
        return rect_corners(x, y, ux, uy, self.length * 0.5, self.width * 0.5)


class PedestrianState:
    __slots__ = ("id", "crosswalk", "state", "progress", "direction", "timer", "speed")

    IDLE, WAITING, CROSSING = 0, 1, 2

    def __init__(self, pid: int, crosswalk: str, timer: float, direction: int):
        self.id = pid
        self.crosswalk = crosswalk
        self.state = PedestrianState.IDLE
        self.progress = 0.0
        self.direction = direction  # +1 or -1 along the crosswalk axis
        self.timer = timer
        self.speed = 0.0

    @property
    def waiting(self) -> bool:
        return self.state == PedestrianState.WAITING

    def lateral(self, half_span: float) -> float:
        """Signed position along the crosswalk axis."""
        span = 2.0 * half_span
        if self.direction > 0:
            return -half_span + self.progress * span
        return half_span - self.progress * span

    def position(self, cw) -> tuple[float, float]:
        lam = self.lateral(cw.half_span)
        return (cw.center[0] + lam * cw.axis[0], cw.center[1] + lam * cw.axis[1])


@dataclass
class StepEvents:
    collision: bool = False
    near_collision: bool = False
    agent_at_fault: bool = False
    collided_ids: list = field(default_factory=list)
    episode_done: bool = False
    done_reason: str | None = None  # "timeout" | "collision"


class WorldState:
    """Full simulation snapshot plus derived per-frame indexes."""

    def __init__(self, network: RoadNetwork, config: SimConfig,
                 rng: np.random.Generator):
        self.network = network
        self.config = config
        self.rng = rng
        self.vehicles: list[VehicleState] = []
        self.pedestrians: list[PedestrianState] = []
        self.frame = 0
        self.done = False
        self.done_reason: str | None = None
        self.agent: VehicleState | None = None
        self._sight: SightTables | None = None
        self.lane_cws: dict[str, list[tuple[float, str]]] = {}
        # exit-side bands: upstream pieces whose traffic reaches the band,
        # as (piece key, piece length, remaining distance to the lane start)
        self.cw_feeders: dict[str, list[tuple[str, float, float]]] = {}
        self.cw_drains: dict[str, list[str]] = {}
        for cw in network.crosswalks.values():
            isec = network.intersections[cw.intersection]
            for lid, s in cw.lane_s.items():
                self.lane_cws.setdefault(lid, []).append((s, cw.id))
                if s < 5.0:  # exit-side band
                    feeders: dict[str, tuple[str, float, float]] = {}
                    for c in isec.connectors.values():
                        if c.out_lane != lid:
                            continue
                        feeders[c.key] = (c.key, c.length, 0.0)
                        lin = network.lanes[c.in_lane]
                        prev = feeders.get(c.in_lane)
                        if prev is None or c.length < prev[2]:
                            feeders[c.in_lane] = (c.in_lane, lin.length, c.length)
                    self.cw_feeders[lid] = list(feeders.values())
                else:  # entry-side band: a body may straddle onto a connector
                    drains = [c.key for c in isec.connectors.values() if c.in_lane == lid]
                    self.cw_drains[lid] = drains
        for lst in self.lane_cws.values():
            lst.sort()
        # upstream pieces per lane (feeding connectors and their approach
        # lanes), used by respawn clearance checks
        self.lane_feeders: dict[str, list[tuple[str, float, float]]] = {}
        for isec in network.intersections.values():
            for c in isec.connectors.values():
                lst2 = self.lane_feeders.setdefault(c.out_lane, [])
                lst2.append((c.key, c.length, 0.0))
                lin = network.lanes[c.in_lane]
                lst2.append((c.in_lane, lin.length, c.length))
        # per-frame indexes
        self.piece_occ: dict[str, list] = {}
        self.registry: dict[tuple[str, str], list] = {}
        self.crossing_cws: set[str] = set()
        self._occ_frame = -1  # frame whose state the indexes reflect
        self.reg_range = max(REG_RANGE, config.encoder.monitor_range + 10.0)
        self.idmc = _IdmConsts(config.idm)

    @property
    def clock(self) -> float:
        return self.frame / self.config.fps

    @property
    def sight(self) -> SightTables:
        # built on first use; depends only on the static map
        if self._sight is None:
            self._sight = SightTables.build(self.network,
                                            self.config.encoder.monitor_range)
        return self._sight

    def digest(self) -> str:
        vals = array("d")
        for veh in self.vehicles:
            vals.extend((float(veh.id), veh.s, veh.v, veh.a))
        for ped in self.pedestrians:
            vals.extend((float(ped.id), float(ped.state), ped.progress,
                         float(ped.direction), ped.timer))
        state = self.rng.bit_generator.state["state"]
        blob = vals.tobytes() + f"|{self.frame}|{state['state']}|{state['inc']}".encode()
        return hashlib.blake2b(blob, digest_size=12).hexdigest()

    # ------------------------------------------------------------------
    def rebuild_indexes(self) -> None:
        occ = self.piece_occ
        occ.clear()
        reg = self.registry
        reg.clear()
        occ_get = occ.get
        reg_get = reg.get
        for veh in self.vehicles:
            pieces = veh.route.pieces
            piece = pieces[veh.piece_i]
            key = piece.key
            s_in = veh.s - piece.start
            item = (s_in, veh)
            lst = occ_get(key)
            if lst is None:
                occ[key] = [item]
            else:
                lst.append(item)
            if s_in < veh.length and veh.piece_i > 0:
                # the body straddles back onto the previous piece; register it
                # there too so followers' leader scans cannot miss it
                prev = pieces[veh.piece_i - 1]
                item2 = (s_in + prev.length, veh)
                lst2 = occ_get(prev.key)
                if lst2 is None:
                    occ[prev.key] = [item2]
                else:
                    lst2.append(item2)
            cp = veh.next_conn_piece()
            if cp is not None:
                d_entry = cp.start - veh.s
                if d_entry <= self.reg_range:
                    rkey = (cp.isec, cp.key)
                    rlst = reg_get(rkey)
                    if rlst is None:
                        reg[rkey] = [(d_entry, veh)]
                    else:
                        rlst.append((d_entry, veh))
        for lst in occ.values():
            if len(lst) > 1:
                lst.sort(key=_occ_key)

    def zone_occupied(self, conn, entry: float, exit_: float, exclude=None) -> bool:
        """Any vehicle body overlapping [entry, exit_] along this connector,
        with a clearance margin covering body rotation at the exit corners."""
        for s_in, o in self.piece_occ.get(conn.key, ()):
            if o is exclude:
                continue
            if s_in > entry - 1.2 and s_in - o.length < exit_ + 1.2:
                return True
        for s_in, o in self.piece_occ.get(conn.out_lane, ()):
            if o is exclude or s_in > o.length + 3.5:
                continue
            if conn.length + s_in - o.length < exit_ + 1.2:
                return True
        return False


def _occ_key(item):
    return item[0]


# --------------------------------------------------------------------------
# spawning
# --------------------------------------------------------------------------

def spawn_traffic(network: RoadNetwork, seed: int,
                  car_range: tuple[int, int] | None = None,
                  ped_range: tuple[int, int] | None = None,
                  config: SimConfig | None = None) -> WorldState:
    """Populate a world: entity counts drawn uniformly and independently from
    the two ranges, agent at a designated spawn with v = 0, no initial overlap.
    """
    config = config or SimConfig()
    car_range = car_range or config.car_range
    ped_range = ped_range or config.ped_range
    if car_range[1] < car_range[0] or ped_range[1] < ped_range[0]:
        raise ValueError("empty count range")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(23,)))
    world = WorldState(network, config, rng)
    n_cars = int(rng.integers(car_range[0], car_range[1] + 1))
    n_peds = int(rng.integers(ped_range[0], ped_range[1] + 1))
    if not network.spawn_points:
        raise SpawnError("network has no spawn points")

    veh_cfg = config.vehicle
    occupied: dict[str, list[tuple[float, float]]] = {}  # lane -> [(front, rear)]

    def clear_at(lane_id: str, off: float, length: float,
                 ahead: float, behind: float) -> bool:
        for f, r in occupied.get(lane_id, ()):
            if off + ahead > r and off - length - behind < f:
                return True  # conflicts with an existing body
        return False

    def place(vid: int, is_agent: bool) -> VehicleState:
        attempts = 80
        for k in range(attempts):
            sp = network.spawn_points[int(rng.integers(len(network.spawn_points)))]
            lane_id, off = sp
            ahead, behind = (6.0, 14.0) if k < attempts // 2 else (3.0, 8.0)
            if clear_at(lane_id, off, veh_cfg.length, ahead, behind):
                continue
            min_len = (config.episode_seconds * config.reward.v_upper * 1.1 + 60
                       if is_agent else 320.0)
            route = sample_route(network, sp, rng, min_length=min_len,
                                 avoid_sinks=is_agent)
            if is_agent:
                v = 0.0
            else:
                gap_ahead = math.inf
                for f, r in occupied.get(lane_id, ()):
                    if r - veh_cfg.length > off:
                        gap_ahead = min(gap_ahead, r - veh_cfg.length - off)
                draw = float(rng.uniform(0.3, 0.8)) * config.idm.v0
                if math.isfinite(gap_ahead):
                    v_safe = math.sqrt(max(0.0, 2.0 * config.idm.b *
                                           (gap_ahead - config.idm.s0)))
                    draw = min(draw, v_safe)
                v = draw
            veh = VehicleState(vid, route, off, v, veh_cfg.length, veh_cfg.width,
                               is_agent=is_agent)
            occupied.setdefault(lane_id, []).append((off, off - veh_cfg.length))
            return veh
        raise SpawnError(f"could not place vehicle {vid} without overlap")

    agent = place(0, True)
    world.agent = agent
    world.vehicles.append(agent)
    for i in range(1, n_cars + 1):
        world.vehicles.append(place(i, False))

    cw_ids = sorted(network.crosswalks)
    if n_peds > 0 and not cw_ids:
        raise SpawnError("network has no crosswalks for pedestrians")
    for j in range(n_peds):
        cw = cw_ids[int(rng.integers(len(cw_ids)))]
        timer = float(rng.uniform(0.5, 12.0))
        direction = 1 if rng.random() < 0.5 else -1
        world.pedestrians.append(PedestrianState(10_000 + j, cw, timer, direction))

    world.rebuild_indexes()
    world._occ_frame = 0
    return world


# --------------------------------------------------------------------------
# stepping
# --------------------------------------------------------------------------

def step_world(world: WorldState, agent_accel: float, dt: float | None = None
               ) -> tuple[WorldState, StepEvents]:
    """Advance one frame: pedestrians and background drivers move from the
    pre-step snapshot, the agent applies the supplied (post-shield)
    acceleration, then collisions are evaluated on the updated poses.
    The world object is advanced in place and returned with the events.
    """
    if world.done:
        raise SimulationError("episode already finished; reset the world")
    cfg = world.config
    dt = cfg.dt if dt is None else dt
    if not -DECEL_LIMIT - 1e-9 <= agent_accel <= cfg.idm.a_max + 1e-9:
        raise SimulationError(f"agent acceleration {agent_accel} outside [-7, a_max]")

    if world._occ_frame != world.frame:
        world.rebuild_indexes()
    _update_pedestrians(world, dt)

    accels = [0.0] * len(world.vehicles)
    for i, veh in enumerate(world.vehicles):
        accels[i] = agent_accel if veh.is_agent else _driver_accel(world, veh)

    for i, veh in enumerate(world.vehicles):
        a = accels[i]
        veh.a = a
        v = veh.v + a * dt
        veh.v = v if v > 0.0 else 0.0
        veh.s += veh.v * dt
        _advance_piece(world, veh)

    world.rebuild_indexes()
    world._occ_frame = world.frame + 1
    events = detect_collisions(world)
    world.frame += 1
    if events.collision:
        world.done = True
        world.done_reason = "collision"
    elif world.frame >= cfg.max_frames:
        world.done = True
        world.done_reason = "timeout"
    events.episode_done = world.done
    events.done_reason = world.done_reason
    return world, events


def _advance_piece(world: WorldState, veh: VehicleState) -> None:
    route = veh.route
    pieces = route.pieces
    i = veh.piece_i
    while i + 1 < len(pieces) and veh.s >= pieces[i].start + pieces[i].length:
        i += 1
    if i != veh.piece_i:
        veh.piece_i = i
        veh._sync_conn_ptr()
    if veh.s >= route.length - 0.05:
        if veh.is_agent:
            veh.s = route.length - 0.05
            veh.v = 0.0
        else:
            _respawn(world, veh)


def _respawn(world: WorldState, veh: VehicleState) -> None:
    net = world.network
    rng = world.rng
    for attempt in range(50):
        sp = net.spawn_points[int(rng.integers(len(net.spawn_points)))]
        lane_id, off = sp
        ahead = 8.0
        behind = 22.0 if attempt < 25 else 14.0  # upstream traffic must be able to stop
        blocked = False
        for s_in, o in world.piece_occ.get(lane_id, ()):
            if o is veh:
                continue
            if off + ahead > s_in - o.length and off - veh.length - behind < s_in:
                blocked = True
                break
        if not blocked and off - veh.length < behind:
            # spawn near the lane start: check traffic about to enter it
            for key, plen, extra in world.lane_feeders.get(lane_id, ()):
                for s_in, o in world.piece_occ.get(key, ()):
                    if o is veh:
                        continue
                    if (plen - s_in) + extra + off < behind + veh.length:
                        blocked = True
                        break
                if blocked:
                    break
        if blocked:
            continue
        veh.route = sample_route(net, sp, rng, min_length=320.0)
        veh.s = off
        veh.v = 0.0
        veh.piece_i = 0
        veh.conn_ptr = 0
        veh.yield_until = -1
        veh.wait_since = -1
        veh._sync_conn_ptr()
        world.piece_occ.setdefault(lane_id, []).append((off, veh))
        return
    # no room this frame: park at the route end, retry next frame
    veh.s = veh.route.length - 0.05
    veh.v = 0.0


# --------------------------------------------------------------------------
# pedestrians
# --------------------------------------------------------------------------

def _update_pedestrians(world: WorldState, dt: float) -> None:
    cfg = world.config.pedestrian
    net = world.network
    crossing = world.crossing_cws
    crossing.clear()
    for ped in world.pedestrians:
        if ped.state == PedestrianState.IDLE:
            ped.timer -= dt
            if ped.timer <= 0.0:
                ped.state = PedestrianState.WAITING
        elif ped.state == PedestrianState.WAITING:
            if _gap_acceptable(world, net.crosswalks[ped.crosswalk]):
                ped.state = PedestrianState.CROSSING
                ped.progress = 0.0
                ped.speed = cfg.speed
        else:
            cw = net.crosswalks[ped.crosswalk]
            ped.progress += cfg.speed * dt / (2.0 * cw.half_span)
            if ped.progress >= 1.0:
                ped.progress = 0.0
                ped.state = PedestrianState.IDLE
                ped.speed = 0.0
                ped.direction = -ped.direction
                ped.timer = float(world.rng.uniform(*cfg.idle_range))
        if ped.state == PedestrianState.CROSSING:
            crossing.add(ped.crosswalk)


def _gap_acceptable(world: WorldState, cw) -> bool:
    """No vehicle body on the band and none arriving within the time gap."""
    ttc_min = world.config.pedestrian.min_gap_ttc
    occ = world.piece_occ
    net = world.network
    near_standoff = 4.0  # even a crawling body this close blocks a start
    for lane_id, s_cw in cw.lane_s.items():
        lane_len = net.lanes[lane_id].length
        for s_in, o in occ.get(lane_id, ()):
            if (s_in > s_cw - cw.half_span - near_standoff and
                    s_in - o.length < s_cw + cw.half_span + 1.0):
                return False  # body on or nearly on the band
            if s_in < s_cw and o.v > 0.05 and (s_cw - s_in) / o.v < ttc_min:
                return False
        for key, plen, extra in world.cw_feeders.get(lane_id, ()):
            for s_in, o in occ.get(key, ()):
                d = (plen - s_in) + extra + s_cw
                if o.v > 0.05 and d / o.v < ttc_min:
                    return False
        for conn_key in world.cw_drains.get(lane_id, ()):
            for s_in, o in occ.get(conn_key, ()):
                # rear mapped back onto the lane; still on or near the band?
                rear_on_lane = lane_len + s_in - o.length
                if rear_on_lane < s_cw + cw.half_span + 1.0:
                    return False
    return True


# --------------------------------------------------------------------------
# background driver
# --------------------------------------------------------------------------

def _driver_accel(world: WorldState, veh: VehicleState) -> float:
    cfg = world.config
    idm = world.idmc
    route = veh.route
    pieces = route.pieces
    piece = pieces[veh.piece_i]
    v0 = piece.speed_limit if piece.speed_limit < idm.v0 else idm.v0
    v = veh.v
    occ = world.piece_occ

    x = v / v0
    if idm.delta4:
        x2 = x * x
        a = idm.a_max * (1.0 - x2 * x2)  # free road
    else:
        a = idm.a_max * (1.0 - x ** idm.delta)

    # leader and crosswalk scan along own route
    my_front = veh.s
    leader_found = False
    leader_gap = math.inf
    leader_v = 0.0
    i = veh.piece_i
    while i < len(pieces):
        p = pieces[i]
        rel = p.start - my_front
        if rel > LOOK_AHEAD:
            break
        s_in_lo = my_front - p.start if i == veh.piece_i else -1.0
        if not leader_found:
            for s_in, o in occ.get(p.key, ()):
                if o is veh or s_in <= s_in_lo:
                    continue
                leader_found = True
                leader_gap = p.start + s_in - my_front - o.length
                leader_v = o.v
                break  # lists sorted by s
        if p.kind == "lane":
            for s_cw, cw_id in world.lane_cws.get(p.key, ()):
                d_cw = p.start + s_cw - my_front
                if 0.3 < d_cw < LOOK_AHEAD and cw_id in world.crossing_cws:
                    a_cw = _idm_accel_fast(v, 0.0, d_cw - 2.0, idm, v0)
                    if a_cw < a:
                        a = a_cw
        i += 1

    if leader_found:
        if leader_gap <= 0.05:
            a = -DECEL_LIMIT  # overlapped; emergency stop
        else:
            a_l = _idm_accel_fast(v, leader_v, leader_gap, idm, v0)
            if a_l < a:
                a = a_l

    # intersection handling
    if not cfg.disable_yielding:
        cp = veh.next_conn_piece()
        if cp is not None:
            d_entry = cp.start - my_front
            if 0.0 < d_entry <= 60.0:
                if world.frame >= veh.yield_until:
                    _refresh_yield(world, veh, cp, d_entry)
                if veh.yield_stop:
                    stopped = v < 0.2 and d_entry < 9.0
                    if stopped and veh.wait_since < 0:
                        veh.wait_since = world.frame
                    if (veh.yield_kind == "phantom" and veh.wait_since >= 0 and
                            world.frame - veh.wait_since > 3 * cfg.fps):
                        # nose out: concealment cannot clear from a standstill
                        if v > CREEP_SPEED:
                            a = min(a, -idm.b)
                    else:
                        a_y = _idm_accel_fast(v, 0.0, d_entry - 1.2, idm, v0)
                        if a_y < a:
                            a = a_y
                else:
                    veh.wait_since = -1
                if veh.blind_cap < math.inf:
                    # decelerate early enough to pass the entry at the cap
                    cap = veh.blind_cap
                    v_allow = math.sqrt(cap * cap + 2.0 * idm.b * max(0.0, d_entry - 2.0))
                    if v > v_allow:
                        a = min(a, -idm.b)
            elif d_entry <= 0.0:
                veh.wait_since = -1

    if a < -DECEL_LIMIT:
        a = -DECEL_LIMIT
    elif a > idm.a_max:
        a = idm.a_max
    return a


def _refresh_yield(world: WorldState, veh: VehicleState, cp, d_entry: float) -> None:
    """Recompute the cached yield decision (reaction interval ~0.5 s)."""
    cfg = world.config
    veh.yield_until = world.frame + REACT_FRAMES + (veh.id % 5)
    veh.yield_stop = False
    veh.yield_kind = ""
    veh.blind_cap = math.inf
    net = world.network
    isec = net.intersections[cp.isec]
    my_conn = isec.connectors[cp.key]
    my_app = Approach(isec.id, my_conn.u_in, my_conn.turn)
    idm = world.idmc
    enc = cfg.encoder

    # spillback: do not enter the box without room on the far side
    if d_entry < 30.0:
        for s_in, o in world.piece_occ.get(my_conn.out_lane, ()):
            if o is not veh and s_in - o.length < veh.length + 1.5:
                veh.yield_stop = True
                veh.yield_kind = "exit"
                return

    on_approach = veh.route.pieces[veh.piece_i].key == my_conn.in_lane
    lane_len = net.lanes[my_conn.in_lane].length if on_approach else 0.0

    for other_key, zone in isec.conflicts_by_conn.get(my_conn.key, ()):
        e_mine, x_mine = zone.offsets[my_conn.key]
        e_oth, x_oth = zone.offsets[other_key]
        other_conn = isec.connectors[other_key]
        if world.zone_occupied(other_conn, e_oth, x_oth, exclude=veh):
            veh.yield_stop = True
            veh.yield_kind = "traffic"
            continue
        opp = Approach(isec.id, other_conn.u_in, other_conn.turn)
        prio = has_priority_other(my_app, opp)
        for d_e_o, o in world.registry.get((isec.id, other_key), ()):
            if o is veh:
                continue
            d_zone = d_e_o + e_oth
            if d_zone < -(x_oth - e_oth) - o.length:
                continue  # already through
            if o.v > STOPPED_EPS:
                committed = d_zone < (o.v * o.v) / (2.0 * idm.b) + 0.5 * o.v + 1.5
                if committed or (prio and real_vehicle_incoming(d_zone, o.v, enc)):
                    veh.yield_stop = True
                    veh.yield_kind = "traffic"
                    break
        else:
            # phantom on the conflicting approach when concealed
            if on_approach and net.buildings:
                s_obs = veh.s - (cp.start - lane_len)
                vis = world.sight.prefix(my_conn.in_lane, lane_len, s_obs,
                                         other_conn.in_lane)
                d_ph = vis + e_oth
                if phantom_incoming(d_ph, enc, idm.a_max, idm.v0):
                    if prio:
                        veh.yield_stop = True
                        if not veh.yield_kind:
                            veh.yield_kind = "phantom"
                    else:
                        veh.blind_cap = min(veh.blind_cap, BLIND_CAP)


# --------------------------------------------------------------------------
# collisions
# --------------------------------------------------------------------------

def detect_collisions(world: WorldState) -> StepEvents:
    """Agent-centric collision and near-collision detection on current poses."""
    ev = StepEvents()
    agent = world.agent
    if agent is None:
        return ev
    ax, ay, aux, auy = agent.pose()
    half_l = agent.length * 0.5
    half_w = agent.width * 0.5
    corners = None
    for o in world.vehicles:
        if o is agent:
            continue
        # coarse reject on the current piece's bounding box
        bb = o.route.pieces[o.piece_i].bbox
        slack = o.length + half_l + 3.0
        if (ax < bb[0] - slack or ax > bb[2] + slack or
                ay < bb[1] - slack or ay > bb[3] + slack):
            continue
        ox, oy, oux, ouy = o.pose()
        reach = half_l + o.length * 0.5 + 1.0
        if abs(ox - ax) > reach or abs(oy - ay) > reach:
            continue
        if corners is None:
            corners = rect_corners(ax, ay, aux, auy, half_l, half_w)
        other = rect_corners(ox, oy, oux, ouy, o.length * 0.5, o.width * 0.5)
        if convex_overlap(corners, other):
            ev.collision = True
            ev.collided_ids.append(o.id)
            if _agent_at_fault_vehicle(world, agent, o):
                ev.agent_at_fault = True
    r = world.config.pedestrian.radius
    for ped in world.pedestrians:
        if ped.state != PedestrianState.CROSSING:
            continue
        cw = world.network.crosswalks[ped.crosswalk]
        px, py = ped.position(cw)
        if abs(px - ax) > half_l + 1.0 or abs(py - ay) > half_l + 1.0:
            continue
        dx, dy = px - ax, py - ay
        lon = abs(dx * aux + dy * auy)
        lat = abs(dx * -auy + dy * aux)
        d_lon = max(0.0, lon - half_l)
        d_lat = max(0.0, lat - half_w)
        if math.hypot(d_lon, d_lat) <= r:
            ev.collision = True
            ev.collided_ids.append(ped.id)
            ev.agent_at_fault = True  # pedestrians on crosswalks always have priority
    _near_collision(world, agent, ev)
    return ev


def _near_collision(world: WorldState, agent: VehicleState, ev: StepEvents) -> None:
    cfg = world.config
    gap, closing = nearest_obstruction(world, agent, horizon=25.0)
    if gap is None:
        return
    if gap < cfg.near_collision_gap:
        ev.near_collision = True
    elif closing > 0.0 and gap / closing < cfg.near_collision_ttc:
        ev.near_collision = True


def nearest_obstruction(world: WorldState, veh: VehicleState, horizon: float = 25.0
                        ) -> tuple[float | None, float]:
    """Nearest entity body physically on the vehicle's route corridor ahead:
    (gap from the front bumper, closing speed). (None, 0) when free."""
    occ = world.piece_occ
    route = veh.route
    pieces = route.pieces
    my_front = veh.s
    best = None
    best_closing = 0.0
    i = veh.piece_i
    while i < len(pieces):
        p = pieces[i]
        rel = p.start - my_front
        if rel > horizon:
            break
        s_in_lo = my_front - p.start if i == veh.piece_i else -1e9
        for s_in, o in occ.get(p.key, ()):
            if o is veh or s_in <= s_in_lo:
                continue
            gap = p.start + s_in - my_front - o.length
            if best is None or gap < best:
                best = gap
                best_closing = veh.v - o.v
            break
        if p.kind == "conn":
            isec = world.network.intersections[p.isec]
            conn = isec.connectors[p.key]
            for other_key, zone in isec.conflicts_by_conn.get(p.key, ()):
                e_mine, x_mine = zone.offsets[p.key]
                d_zone_mine = p.start + e_mine - my_front
                if d_zone_mine > horizon:
                    continue
                e_oth, x_oth = zone.offsets[other_key]
                if world.zone_occupied(isec.connectors[other_key], e_oth, x_oth,
                                       exclude=veh):
                    gap = d_zone_mine
                    if best is None or gap < best:
                        best = gap
                        best_closing = veh.v
        else:
            for s_cw, cw_id in world.lane_cws.get(p.key, ()):
                d_cw = p.start + s_cw - my_front
                if d_cw < -1.0 or d_cw > horizon:
                    continue
                cw = world.network.crosswalks[cw_id]
                lam_lane = cw.lane_lateral.get(p.key, 0.0)
                for ped in world.pedestrians:
                    if ped.state != PedestrianState.CROSSING or ped.crosswalk != cw_id:
                        continue
                    lam = ped.lateral(cw.half_span)
                    if abs(lam - lam_lane) < 1.75 + world.config.pedestrian.radius:
                        gap = d_cw - cw.half_span
                        if best is None or gap < best:
                            best = gap
                            best_closing = veh.v
        i += 1
    return best, best_closing


def _agent_at_fault_vehicle(world: WorldState, agent: VehicleState,
                            other: VehicleState) -> bool:
    """Rear-end by the agent, or the agent entered a conflict zone without
    priority; being rear-ended or side-struck by a priority violator is not
    the agent's fault."""
    # rear-end: other is ahead on the agent's own route pieces
    my_front = agent.s
    i = agent.piece_i
    pieces = agent.route.pieces
    other_piece = other.route.pieces[other.piece_i]
    while i < len(pieces):
        p = pieces[i]
        if p.start - my_front > 12.0:
            break
        if p.key == other_piece.key:
            s_on = p.start + (other.s - other_piece.start)
            if s_on > my_front - 0.5:
                return True  # ran into a leader
        i += 1
    # reverse: agent rear-ended by other
    j = other.piece_i
    opieces = other.route.pieces
    my_piece = pieces[agent.piece_i]
    while j < len(opieces):
        p = opieces[j]
        if p.start - other.s > 12.0:
            break
        if p.key == my_piece.key:
            return False  # other ran into the agent from behind
        j += 1
    # crossing collision: blame follows the priority predicate at the shared box
    mp = pieces[agent.piece_i]
    op = opieces[other.piece_i]
    isec_id = mp.isec if mp.kind == "conn" else (op.isec if op.kind == "conn" else "")
    if not isec_id:
        return False
    isec = world.network.intersections[isec_id]
    my_conn = _conn_for(world, agent, isec_id)
    o_conn = _conn_for(world, other, isec_id)
    if my_conn is None or o_conn is None:
        return False
    ego = Approach(isec_id, my_conn.u_in, my_conn.turn)
    opp = Approach(isec_id, o_conn.u_in, o_conn.turn)
    return has_priority_other(ego, opp)


def _conn_for(world: WorldState, veh: VehicleState, isec_id: str):
    p = veh.route.pieces[veh.piece_i]
    if p.kind == "conn" and p.isec == isec_id:
        return world.network.intersections[isec_id].connectors[p.key]
    cp = veh.next_conn_piece()
    if cp is not None and cp.isec == isec_id and cp.start - veh.s < 20.0:
        return world.network.intersections[isec_id].connectors[cp.key]
    # just exited: previous piece
    for i in range(veh.piece_i, max(-1, veh.piece_i - 3), -1):
        q = veh.route.pieces[i]
        if q.kind == "conn" and q.isec == isec_id:
            return world.network.intersections[isec_id].connectors[q.key]
    return None
