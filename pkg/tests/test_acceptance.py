"""Acceptance suite: one test per release criterion, each printing a PASS/FAIL
line. Run with `pytest tests/test_acceptance.py -v -s`.

The heavy criteria (safety batch, paired comparison) share module-scoped
fixtures so the whole module stays inside its stated runtime budgets.
"""

import math
import time

import numpy as np
import pytest

from shieldsim.config import IdmParams, RewardParams, SimConfig
from shieldsim.episode import run_episode, verify_log
from shieldsim.metrics import compare, episode_seeds
from shieldsim.network import build_route, minimal_map, rigid_transform
from shieldsim.observation import (encode, encode_full, incoming_vehicles,
                                   occupancy_times, time_to_intersection)
from shieldsim.rewards import RewardInputs, compute_reward
from shieldsim.rules import real_vehicle_incoming
from shieldsim.scenarios import run_shield_batch_parallel
from shieldsim.shield import braking_distance
from shieldsim.world import (VehicleState, WorldState, idm_acceleration,
                             spawn_traffic, step_world)

TOL = 1e-9


def _report(name: str, ok: bool, detail: str = "") -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" :: {detail}" if detail else ""))


# ---------------------------------------------------------------------------
# 1. Formula unit suite (tolerance 1e-9)
# ---------------------------------------------------------------------------

def test_formula_unit_suite():
    p = RewardParams()  # the published constants
    assert (p.k_c, p.k_c_abs, p.k_v_upper, p.k_v_lower) == (3.0, 25.0, 0.06, 0.03)
    assert (p.k_a, p.k_intersection, p.k_shield, p.k_dist) == (0.01, 0.2, 0.1, 0.2)

    ok = True
    # reward: cruise frame
    rb = compute_reward(RewardInputs(10.0, 0.0, 0.0, False, False, False, 100.0, 100.0), p)
    ok &= abs(rb.total - 0.0125) < TOL
    # reward: collision frame with shield override
    rb = compute_reward(RewardInputs(5.0, 3.0, -7.0, False, True, False, 100.0, 50.0), p)
    ok &= abs(rb.r_collision + 40.0) < TOL
    ok &= abs(rb.r_shield + 0.7) < TOL
    ok &= abs(rb.r_acceleration + 1.27) < TOL
    # occupancy times
    ok &= occupancy_times(10.0, 14.0, 5.0) == (2.0, 2.8)
    ok &= occupancy_times(0.0, 4.0, 5.0) == (0.0, 0.8)
    # time to intersection
    ok &= abs(time_to_intersection(30.0, 10.0) - 3.0) < TOL
    ok &= time_to_intersection(30.0, 0.0, cap=10.0) == 10.0
    # braking distance (one reaction frame at 24 FPS)
    ok &= abs(braking_distance(14.0, 7.0) - (14.0 ** 2 / 14.0 + 14.0 / 24.0)) < TOL
    ok &= braking_distance(0.0) == 0.0
    # IDM closed form
    idm = IdmParams()
    ok &= abs(idm_acceleration(0.0, 0.0, math.inf, idm) - 3.0) < TOL
    ok &= abs(idm_acceleration(idm.v0, 0.0, math.inf, idm)) < TOL
    v, gap = 10.0, idm.s0 + 10.0 * idm.T
    expected = idm.a_max * (1.0 - (v / idm.v0) ** idm.delta - 1.0)
    ok &= abs(idm_acceleration(v, v, gap, idm) - expected) < TOL
    _report("formula unit suite (1e-9)", ok)
    assert ok


# ---------------------------------------------------------------------------
# 2. Shield safety: 10k adversarial occluded crossings, zero prioritized
#    co-occupancy, zero at-fault (budget: 10 min)
# ---------------------------------------------------------------------------

def test_shield_safety_10k():
    t0 = time.time()
    total = run_shield_batch_parallel(10_000, SimConfig())
    wall = time.time() - t0
    ok = total["violations"] == 0 and total["at_fault"] == 0
    _report("shield safety over 10k occluded scenarios", ok,
            f"{total} in {wall:.0f}s")
    assert wall <= 600.0, f"safety batch exceeded its 10 min budget: {wall:.0f}s"
    assert total["violations"] == 0
    assert total["at_fault"] == 0


# ---------------------------------------------------------------------------
# 3. Minimal interference: 100 episodes, untriggered frames execute the
#    proposal exactly
# ---------------------------------------------------------------------------

def test_minimal_interference_100_episodes():
    from concurrent.futures import ProcessPoolExecutor
    cfg = SimConfig()
    args = [(i, cfg.to_dict()) for i in range(100)]
    with ProcessPoolExecutor(max_workers=2) as pool:
        results = list(pool.map(_interference_episode, args))
    mismatches = sum(r[0] for r in results)
    checked = sum(r[1] for r in results)
    ok = mismatches == 0 and checked > 0
    _report("minimal interference across 100 ier-idm episodes", ok,
            f"{checked} untriggered frames, {mismatches} mismatches")
    assert ok


def _interference_episode(args):
    i, cfg_dict = args
    cfg = SimConfig.from_dict(cfg_dict)
    ms, ts = episode_seeds(7_000, i)
    log = run_episode(ms, ts, "ier-idm", cfg, collect_frames=True)
    mism = 0
    checked = 0
    for rec in log.frames:
        if not rec["shield_triggered"]:
            checked += 1
            if rec["agent_a"] != rec["proposed_a"]:
                mism += 1
    return mism, checked


# ---------------------------------------------------------------------------
# 4-6. Paired-seed comparison: qualitative table reproduction, speed
#      retention, efficiency ordering (budget: 30 min)
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def paired_rows():
    t0 = time.time()
    rows = compare(["ttc", "ttc-creep", "ier-acc", "ier-idm"], 100, 0,
                   SimConfig(), workers=2)
    wall = time.time() - t0
    assert wall <= 1800.0, f"paired run exceeded its 30 min budget: {wall:.0f}s"
    print(f"\npaired 100-episode run in {wall:.0f}s")
    for r in rows:
        print(f"  {r.policy:10s} v={r.avg_velocity_kmh:6.2f} rate={r.collision_rate:7.4f} "
              f"eff={r.energy_eff_rate:6.4f} collisions={r.collisions} at_fault={r.agent_at_fault}")
    return {r.policy: r for r in rows}


def test_table_qualitative_ordering(paired_rows):
    ttc = paired_rows["ttc"]
    creep = paired_rows["ttc-creep"]
    acc = paired_rows["ier-acc"]
    idm = paired_rows["ier-idm"]
    ok_order = (ttc.collision_rate > creep.collision_rate
                > acc.collision_rate >= idm.collision_rate)
    ok_ratio = ttc.collision_rate >= 10.0 * idm.collision_rate
    ok_fault = acc.agent_at_fault == 0 and idm.agent_at_fault == 0
    _report("collision-rate ordering ttc > creep > acc >= idm", ok_order,
            f"{ttc.collision_rate:.4f} > {creep.collision_rate:.4f} > "
            f"{acc.collision_rate:.4f} >= {idm.collision_rate:.4f}")
    _report("rate(ttc) >= 10x rate(idm)", ok_ratio,
            f"{ttc.collision_rate:.4f} vs 10 x {idm.collision_rate:.4f}")
    _report("shielded policies cause zero at-fault collisions", ok_fault,
            f"acc={acc.agent_at_fault}, idm={idm.agent_at_fault}")
    assert ok_order and ok_ratio and ok_fault


def test_speed_retention(paired_rows):
    idm = paired_rows["ier-idm"].avg_velocity_kmh
    ttc = paired_rows["ttc"].avg_velocity_kmh
    ok = idm >= 0.75 * ttc
    _report("speed retention idm >= 0.75 x ttc", ok, f"{idm:.2f} vs 0.75*{ttc:.2f}")
    assert ok


def test_efficiency_ordering(paired_rows):
    idm = paired_rows["ier-idm"].energy_eff_rate
    acc = paired_rows["ier-acc"].energy_eff_rate
    ok = idm < acc
    _report("energy efficiency idm < acc (strict)", ok, f"{idm:.4f} < {acc:.4f}")
    assert ok


# ---------------------------------------------------------------------------
# 7. Determinism and replay: byte-identical logs on 100 random episodes
# ---------------------------------------------------------------------------

def test_replay_verify_100_episodes():
    from concurrent.futures import ProcessPoolExecutor
    cfg = SimConfig()
    cfg.episode_seconds = 30.0  # replay corpus: shorter episodes, same machinery
    rng = np.random.default_rng(2024)
    policies = ["ttc", "ttc-creep", "ier-acc", "ier-idm"]
    args = [(int(rng.integers(2 ** 31)), int(rng.integers(2 ** 31)),
             policies[int(rng.integers(4))], cfg.to_dict()) for _ in range(100)]
    with ProcessPoolExecutor(max_workers=2) as pool:
        results = list(pool.map(_replay_one, args))
    failures = [msg for ok, msg in results if not ok]
    _report("replay --verify on 100 random episodes", not failures,
            failures[0] if failures else "all byte-identical")
    assert not failures


def _replay_one(args):
    ms, ts, pol, cfg_dict = args
    cfg = SimConfig.from_dict(cfg_dict)
    log = run_episode(ms, ts, pol, cfg)
    return verify_log(log)


# ---------------------------------------------------------------------------
# 8. Encoder properties over 10k fuzz worlds
# ---------------------------------------------------------------------------

def _fuzz_world(seed: int, net, cfg) -> WorldState:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(91,)))
    world = WorldState(net, cfg, rng)
    entries = sorted(net.entry_stub_lanes())
    n = int(rng.integers(1, 9))
    for vid in range(n):
        lane_id = entries[int(rng.integers(len(entries)))]
        lane = net.lanes[lane_id]
        off = float(rng.uniform(2.0, lane.length - 2.0))
        turn = ["left", "straight", "right"][int(rng.integers(3))]
        route = build_route(net, [lane_id, lane.successors[turn]])
        blocked = any(v.route.lane_ids[0] == lane_id and abs(v.s - off) < 6.0
                      for v in world.vehicles)
        if blocked and vid > 0:
            continue
        world.vehicles.append(VehicleState(vid, route, off, float(rng.uniform(0, 14)),
                                           cfg.vehicle.length, cfg.vehicle.width,
                                           is_agent=(vid == 0)))
    world.agent = world.vehicles[0]
    world.rebuild_indexes()
    return world


def test_encoder_properties_10k_fuzz():
    cfg = SimConfig()
    buildings = ((-40.0, -40.0, -10.0, -10.0), (9.5, 9.5, 45.0, 45.0))
    net = minimal_map(buildings=buildings)
    variants = [rigid_transform(net, q, tx, ty)
                for q, tx, ty in ((1, 0.0, 0.0), (2, 4096.0, -1024.0),
                                  (3, 128.25, 256.484375))]
    net_extra = minimal_map(buildings=buildings + ((-45.0, 9.5, -9.5, 40.0),))
    isec = next(iter(net.intersections.values()))
    enc = cfg.encoder

    bad_pairs = 0
    bad_incoming = 0
    bad_invariance = 0
    bad_monotone = 0
    t0 = time.time()
    for seed in range(10_000):
        world = _fuzz_world(seed, net, cfg)
        obs = encode(world, world.agent)
        # tto <= ttv per cell
        if any(a > b + 1e-12 for a, b in zip(obs.tto, obs.ttv)):
            bad_pairs += 1
        # arrival filter equals the brute-force conjunct evaluation
        got = {i for i in incoming_vehicles(world, isec, enc) if isinstance(i, int)}
        expected = set()
        for veh in world.vehicles:
            cp = veh.next_conn_piece()
            if cp is None or cp.isec != isec.id:
                continue
            conn = isec.connectors[cp.key]
            zones = isec.conflicts_by_conn.get(cp.key, ())
            entry = min((z.offsets[cp.key][0] for _, z in zones), default=0.0)
            d_c = cp.start - veh.s + entry
            if d_c <= -(conn.length + veh.length):
                continue
            if d_c <= 0.0 or real_vehicle_incoming(d_c, veh.v, enc):
                expected.add(veh.id)
        if got != expected:
            bad_incoming += 1
        # rigid-transform invariance, bit-exact (same entity state, moved map)
        ref = obs.to_vector()
        for vnet in variants:
            w2 = _fuzz_world(seed, vnet, cfg)
            if encode(w2, w2.agent).to_vector() != ref:
                bad_invariance += 1
                break
        # adding a building never increases any cell's tto
        w3 = _fuzz_world(seed, net_extra, cfg)
        obs3 = encode(w3, w3.agent)
        if any(a > b + 1e-12 for a, b in zip(obs3.tto, obs.tto)):
            bad_monotone += 1
    wall = time.time() - t0
    ok = not (bad_pairs or bad_incoming or bad_invariance or bad_monotone)
    _report("encoder properties on 10k fuzz worlds", ok,
            f"pairs={bad_pairs} incoming={bad_incoming} "
            f"invariance={bad_invariance} monotone={bad_monotone} ({wall:.0f}s)")
    assert ok


# ---------------------------------------------------------------------------
# 9. Throughput: full pipeline at 100 entities, single-threaded, >= 50x
# ---------------------------------------------------------------------------

def test_throughput_50x_realtime(net_seed1):
    from shieldsim.policies import ACTIONS, PolicyContext, make_policy
    from shieldsim.shield import shield_decision

    cfg = SimConfig()
    world = spawn_traffic(net_seed1, 3, (60, 60), (39, 39), cfg)
    assert len(world.vehicles) + len(world.pedestrians) == 100
    policy = make_policy("ier-idm")
    policy.reset(0)
    rng = np.random.default_rng(0)
    obs, aux = encode_full(world, world.agent)
    world.sight  # build the static tables outside the timed section
    prev = None
    frames = 24 * 60  # one simulated minute
    t0 = time.time()
    for _ in range(frames):
        ctx = PolicyContext(world, world.agent, obs, aux, rng)
        proposed = ACTIONS[policy.act(ctx)]
        dec = shield_decision(world, aux, proposed, cfg.shield, prev)
        prev = (dec.d_intersection - dec.d_braking
                if math.isfinite(dec.d_intersection) else None)
        world, ev = step_world(world, dec.final_accel)
        obs, aux = encode_full(world, world.agent)
        if ev.episode_done:
            break
    wall = time.time() - t0
    factor = (frames / 24.0) / wall
    ok = factor >= 50.0
    _report("throughput >= 50x real time at 100 entities", ok,
            f"{factor:.1f}x ({wall:.2f}s for {frames} frames)")
    assert ok
