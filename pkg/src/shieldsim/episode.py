"""Episode execution and bit-exact replay.

One episode: observe, act, shield-check, step, reward, log, at 24 FPS until
timeout or collision. Logs are newline-delimited JSON (header record, one
record per frame, outcome record) and contain everything needed to re-run
the episode and compare byte for byte.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .config import SimConfig
from .network import generate_map, minimal_map
from .observation import encode_full
from .policies import ACTIONS, PolicyContext, make_policy, policy_is_shielded
from .rewards import RewardInputs, compute_reward
from .shield import ShieldDecision, shield_decision
from .world import spawn_traffic, step_world

LOG_SCHEMA = "shieldsim-log/1"


class ReplayError(RuntimeError):
    pass


@dataclass
class EpisodeLog:
    header: dict
    frames: list[dict] = field(default_factory=list)
    outcome: dict = field(default_factory=dict)

    def to_jsonl(self) -> str:
        lines = [json.dumps(self.header, sort_keys=True)]
        lines += [json.dumps(f, sort_keys=True) for f in self.frames]
        lines.append(json.dumps(self.outcome, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "EpisodeLog":
        records = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not records or records[0].get("type") != "header":
            raise ReplayError("log does not start with a header record")
        if records[-1].get("type") != "outcome":
            raise ReplayError("log does not end with an outcome record")
        return cls(header=records[0], frames=records[1:-1], outcome=records[-1])

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def load(cls, path) -> "EpisodeLog":
        with open(path) as fh:
            return cls.from_jsonl(fh.read())


def build_network(map_seed: int, config: SimConfig):
    if config.use_minimal_map:
        return minimal_map()
    return generate_map(map_seed, config.map_params)


def run_episode(map_seed: int, traffic_seed: int, policy_name: str,
                config: SimConfig | None = None,
                collect_frames: bool = True,
                network=None) -> EpisodeLog:
    """Execute the full loop for one episode and return its log."""
    config = config or SimConfig()
    net = network if network is not None else build_network(map_seed, config)
    world = spawn_traffic(net, traffic_seed, config=config)
    policy = make_policy(policy_name)
    policy.reset(traffic_seed)
    shielded = policy_is_shielded(policy_name)
    rparams = dataclasses.replace(config.reward, fps=config.fps)
    policy_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=traffic_seed, spawn_key=(31,)))

    header = {
        "type": "header",
        "schema": LOG_SCHEMA,
        "map_seed": map_seed,
        "traffic_seed": traffic_seed,
        "policy": policy_name,
        "config_digest": config.digest(),
        "config": config.to_dict(),
    }
    log = EpisodeLog(header=header)

    agent = world.agent
    obs, aux = encode_full(world, agent)
    prev_margin: float | None = None
    prev_triggered = False
    sum_v = 0.0
    sum_pos_a = 0.0
    total_reward = 0.0
    interventions = 0
    events = None

    for _ in range(config.max_frames):
        ctx = PolicyContext(world, agent, obs, aux, policy_rng)
        proposed_idx = policy.act(ctx)
        proposed = ACTIONS[proposed_idx]
        dec = shield_decision(world, aux, proposed, config.shield, prev_margin)
        if not shielded:
            dec = ShieldDecision(proposed, proposed, False,
                                 dec.d_intersection, dec.d_braking, "unshielded")
        prev_margin = (dec.d_intersection - dec.d_braking
                       if math.isfinite(dec.d_intersection) else None)
        world, events = step_world(world, dec.final_accel)
        obs, aux = encode_full(world, agent)

        rin = RewardInputs(
            v=agent.v, a_agent=proposed, a_shield=dec.final_accel,
            on_intersection=aux.on_intersection,
            collision=events.collision, near_collision=events.near_collision,
            d_la=config.encoder.d_la, d_free=aux.d_free)
        rb = compute_reward(rin, rparams)

        sum_v += agent.v
        if dec.final_accel > 0.0:
            sum_pos_a += dec.final_accel
        total_reward += rb.total
        if dec.triggered and not prev_triggered:
            interventions += 1  # count intervention onsets, not held frames
        prev_triggered = dec.triggered

        if collect_frames:
            rec = {
                "frame": world.frame - 1,
                "agent_s": agent.s,
                "agent_v": agent.v,
                "agent_a": dec.final_accel,
                "proposed_a": proposed,
                "shield_triggered": dec.triggered,
                "d_intersection": (dec.d_intersection
                                   if math.isfinite(dec.d_intersection) else None),
                "d_braking": dec.d_braking,
                "reward": {
                    "collision": rb.r_collision,
                    "velocity": rb.r_velocity,
                    "acceleration": rb.r_acceleration,
                    "intersection": rb.r_intersection,
                    "shield": rb.r_shield,
                    "distance": rb.r_distance,
                    "total": rb.total,
                },
                "digest": world.digest(),
            }
            if events.collision or events.near_collision:
                rec["events"] = {
                    "collision": events.collision,
                    "near_collision": events.near_collision,
                    "agent_at_fault": events.agent_at_fault,
                    "collided_ids": events.collided_ids,
                }
            log.frames.append(rec)
        if events.episode_done:
            break

    frames_run = world.frame
    log.outcome = {
        "type": "outcome",
        "done_reason": world.done_reason or "timeout",
        "collision": bool(events and events.collision),
        "agent_at_fault": bool(events and events.agent_at_fault),
        "collided_ids": events.collided_ids if events else [],
        "frames": frames_run,
        "totals": {
            "reward": total_reward,
            "shield_interventions": interventions,
            "sum_v": sum_v,
            "sum_pos_a": sum_pos_a,
        },
    }
    return log


def replay_episode(log: EpisodeLog, collect_frames: bool = True) -> EpisodeLog:
    """Re-run an episode from its log header (same seeds, policy, config)."""
    config = SimConfig.from_dict(log.header["config"])
    return run_episode(log.header["map_seed"], log.header["traffic_seed"],
                       log.header["policy"], config,
                       collect_frames=collect_frames)


def verify_log(log: EpisodeLog) -> tuple[bool, str]:
    """Byte-exact check: replaying the header must reproduce the log."""
    if log.header.get("schema") != LOG_SCHEMA:
        return False, f"unsupported schema {log.header.get('schema')!r}"
    fresh = replay_episode(log)
    a, b = log.to_jsonl(), fresh.to_jsonl()
    if a == b:
        return True, "identical"
    for i, (la, lb) in enumerate(zip(a.splitlines(), b.splitlines())):
        if la != lb:
            return False, f"first mismatch at record {i}"
    return False, "length mismatch"


def replay_actions(log: EpisodeLog) -> bool:
    """Drive the simulator with the logged executed actions and check that
    every frame digest matches (policy-independent replay)."""
    config = SimConfig.from_dict(log.header["config"])
    net = build_network(log.header["map_seed"], config)
    world = spawn_traffic(net, log.header["traffic_seed"], config=config)
    for rec in log.frames:
        world, _ = step_world(world, rec["agent_a"])
        if world.digest() != rec["digest"]:
            return False
    return True
