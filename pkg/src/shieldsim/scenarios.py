"""Randomized occluded-intersection scenarios on the minimal map.

Used by the safety acceptance run: a full-throttle agent approaches a
single 4-way crossing with randomly placed corner buildings, random
conflicting traffic and pedestrians; the shield alone must keep the agent
from ever sharing a conflict zone with a road user that has the right of way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import SimConfig
from .geometry import snap
from .network import minimal_map, sample_route
from .observation import encode_full
from .rules import Approach, has_priority_other
from .shield import shield_decision
from .world import (PedestrianState, VehicleState, WorldState, step_world)


@dataclass
class ScenarioResult:
    seed: int
    frames: int
    cleared: bool  # agent passed the crossing
    collision: bool
    agent_at_fault: bool
    co_occupancy_frames: int  # frames sharing a zone with a prioritized user
    min_margin: float
    shield_frames: int


def build_occluded_world(seed: int, config: SimConfig | None = None) -> WorldState:
    """Minimal map, random corner buildings, adversarial-ready traffic."""
    config = config or SimConfig()
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(41,)))

    n_buildings = int(rng.integers(1, 4))
    quadrants = rng.permutation(4)[:n_buildings]
    buildings = []
    for q in quadrants:
        sx = 1.0 if q in (0, 3) else -1.0
        sy = 1.0 if q in (0, 1) else -1.0
        gx = float(rng.uniform(1.0, 8.0))
        gy = float(rng.uniform(1.0, 8.0))
        depth = float(rng.uniform(14.0, 40.0))
        x0 = 3.5 + gx
        y0 = 3.5 + gy
        xs = sorted((snap(sx * x0), snap(sx * (x0 + depth))))
        ys = sorted((snap(sy * y0), snap(sy * (y0 + depth))))
        buildings.append((xs[0], ys[0], xs[1], ys[1]))
    net = minimal_map(buildings=tuple(buildings))

    world = WorldState(net, config, rng)
    entry_lanes = sorted(net.entry_stub_lanes())

    # agent approaches from a random arm, far enough to reach speed
    agent_lane = entry_lanes[int(rng.integers(len(entry_lanes)))]
    lane_len = net.lanes[agent_lane].length
    agent_off = lane_len - float(rng.uniform(40.0, 90.0))
    agent_route = sample_route(net, (agent_lane, max(agent_off, 1.0)), rng,
                               min_length=400.0)
    agent = VehicleState(0, agent_route, max(agent_off, 1.0),
                         float(rng.uniform(0.0, 10.0)),
                         config.vehicle.length, config.vehicle.width, is_agent=True)
    world.agent = agent
    world.vehicles.append(agent)

    n_cross = int(rng.integers(1, 5))
    vid = 1
    others = [l for l in entry_lanes if l != agent_lane]
    for _ in range(n_cross):
        lane_id = others[int(rng.integers(len(others)))]
        llen = net.lanes[lane_id].length
        off = llen - float(rng.uniform(5.0, 90.0))
        blocked = any(v.route.lane_ids[0] == lane_id and abs(v.s - off) < 9.0
                      for v in world.vehicles)
        if blocked:
            continue
        route = sample_route(net, (lane_id, max(off, 1.0)), rng, min_length=300.0)
        v0 = float(rng.uniform(0.0, 13.0))
        world.vehicles.append(VehicleState(vid, route, max(off, 1.0), v0,
                                           config.vehicle.length,
                                           config.vehicle.width))
        vid += 1

    cw_ids = sorted(net.crosswalks)
    for j in range(int(rng.integers(0, 3))):
        cw = cw_ids[int(rng.integers(len(cw_ids)))]
        world.pedestrians.append(PedestrianState(
            10_000 + j, cw, float(rng.uniform(0.0, 6.0)),
            1 if rng.random() < 0.5 else -1))

    world.rebuild_indexes()
    world._occ_frame = 0
    return world


def _zone_violation(world: WorldState) -> bool:
    """Agent's body geometrically shares a strict conflict-zone polygon (or a
    crosswalk band) with a conflicting road user that has the right of way."""
    from .geometry import convex_overlap

    ego = world.agent
    pieces = ego.route.pieces
    p = pieces[ego.piece_i]
    net = world.network
    ego_rect = None
    # vehicle conflicts: evaluate while the agent body is on a connector
    for idx in (ego.piece_i, max(0, ego.piece_i - 1)):
        q = pieces[idx]
        if q.kind != "conn":
            continue
        front_on = ego.s - q.start
        rear_on = front_on - ego.length
        isec = net.intersections[q.isec]
        my_conn = isec.connectors[q.key]
        my_app = Approach(isec.id, my_conn.u_in, my_conn.turn)
        for other_key, zone in isec.conflicts_by_conn.get(q.key, ()):
            if not zone.polygons_strict:
                continue  # only a margin-level conflict, bodies cannot meet
            e_m, x_m = zone.offsets[q.key]
            if not (front_on > e_m and rear_on < x_m):
                continue  # quick reject: agent interval not near this zone
            other_conn = isec.connectors[other_key]
            opp = Approach(isec.id, other_conn.u_in, other_conn.turn)
            if not has_priority_other(my_app, opp):
                continue
            if ego_rect is None:
                ego_rect = ego.footprint()
            hit = [poly for poly in zone.polygons_strict
                   if convex_overlap(ego_rect, poly)]
            if not hit:
                continue
            e_o, x_o = zone.offsets[other_key]
            for s_in, o in world.piece_occ.get(other_key, ()):
                if o is ego:
                    continue
                if s_in > e_o and s_in - o.length < x_o:
                    fp = o.footprint()
                    if any(convex_overlap(fp, poly) for poly in hit):
                        return True
            for s_in, o in world.piece_occ.get(other_conn.out_lane, ()):
                if o is ego or s_in > o.length + 1.0:
                    continue
                if other_conn.length + s_in - o.length < x_o:
                    fp = o.footprint()
                    if any(convex_overlap(fp, poly) for poly in hit):
                        return True
    # pedestrian bands: agent body over a crosswalk while a pedestrian is in
    # the agent's lane band
    if p.kind == "lane":
        for s_cw, cw_id in world.lane_cws.get(p.key, ()):
            front_rel = ego.s - (p.start + s_cw)
            cw = net.crosswalks[cw_id]
            if not (-cw.half_span < front_rel < ego.length + cw.half_span):
                continue
            lam_lane = cw.lane_lateral.get(p.key, 0.0)
            width = 1.75 + world.config.pedestrian.radius
            for ped in world.pedestrians:
                if ped.crosswalk != cw_id or ped.state != PedestrianState.CROSSING:
                    continue
                if abs(ped.lateral(cw.half_span) - lam_lane) < width:
                    return True
    return False


def run_shield_scenario(seed: int, config: SimConfig | None = None,
                        max_seconds: float = 30.0) -> ScenarioResult:
    """Full-throttle agent vs. the shield on one occluded crossing."""
    config = config or SimConfig()
    world = build_occluded_world(seed, config)
    ego = world.agent
    conn_piece = ego.next_conn_piece()
    clear_s = (conn_piece.start + conn_piece.length + ego.length + 1.0
               if conn_piece else ego.route.length)

    prev_margin = None
    violations = 0
    shield_frames = 0
    min_margin = math.inf
    frames = int(max_seconds * config.fps)
    events = None
    parked = 0
    obs, aux = encode_full(world, ego)
    for _ in range(frames):
        dec = shield_decision(world, aux, 3.0, config.shield, prev_margin)
        prev_margin = (dec.d_intersection - dec.d_braking
                       if math.isfinite(dec.d_intersection) else None)
        if dec.triggered:
            shield_frames += 1
        world, events = step_world(world, dec.final_accel)
        obs, aux = encode_full(world, ego)
        if _zone_violation(world):
            violations += 1
        if math.isfinite(dec.d_intersection):
            min_margin = min(min_margin, dec.d_intersection - dec.d_braking)
        if events.collision or ego.s > clear_s:
            break
        # held at the line by a persistent hazard: safe outcome, stop early
        if ego.v < 0.02 and dec.triggered:
            parked += 1
            if parked >= 3 * config.fps:
                break
        else:
            parked = 0
    return ScenarioResult(
        seed=seed, frames=world.frame, cleared=ego.s > clear_s,
        collision=bool(events and events.collision),
        agent_at_fault=bool(events and events.agent_at_fault),
        co_occupancy_frames=violations, min_margin=min_margin,
        shield_frames=shield_frames)


def run_shield_batch(seeds, config: SimConfig | None = None) -> dict:
    config = config or SimConfig()
    total = {"scenarios": 0, "violations": 0, "collisions": 0, "at_fault": 0,
             "cleared": 0, "stuck": 0}
    for seed in seeds:
        r = run_shield_scenario(seed, config)
        total["scenarios"] += 1
        total["violations"] += 1 if r.co_occupancy_frames else 0
        total["collisions"] += 1 if r.collision else 0
        total["at_fault"] += 1 if r.agent_at_fault else 0
        total["cleared"] += 1 if r.cleared else 0
        total["stuck"] += 1 if (not r.cleared and not r.collision) else 0
    return total


def _batch_task(args):
    start, count, cfg_dict = args
    return run_shield_batch(range(start, start + count), SimConfig.from_dict(cfg_dict))


def run_shield_batch_parallel(n: int, config: SimConfig | None = None,
                              workers: int | None = None, chunk: int = 250) -> dict:
    """Scenario seeds 0..n-1 on a process pool; totals merged additively."""
    import os
    from concurrent.futures import ProcessPoolExecutor

    config = config or SimConfig()
    workers = workers if workers is not None else (os.cpu_count() or 1)
    cfg_dict = config.to_dict()
    tasks = [(start, min(chunk, n - start), cfg_dict)
             for start in range(0, n, chunk)]
    if workers <= 1:
        parts = [_batch_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_batch_task, tasks))
    total = {k: 0 for k in parts[0]}
    for p in parts:
        for k, v in p.items():
            total[k] += v
    return total
