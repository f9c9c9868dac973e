"""Batch evaluation: run seeded episode sets, aggregate the three headline
metrics (speed, collisions per speed, positive acceleration per speed), and
emit comparison tables over identical seed pairs.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import SimConfig
from .episode import run_episode

CSV_COLUMNS = ["policy", "episodes", "avg_velocity_kmh", "collision_rate",
               "energy_eff_rate", "collisions", "agent_at_fault",
               "shield_interventions_per_episode"]


@dataclass
class MetricsSummary:
    policy: str
    episodes: int
    avg_velocity_kmh: float
    collision_rate: float
    energy_eff_rate: float  # mean positive acceleration / mean speed (SI)
    collisions: int
    agent_at_fault: int
    shield_interventions_per_episode: float

    def row(self) -> list:
        return [self.policy, self.episodes,
                _fmt(self.avg_velocity_kmh), _fmt(self.collision_rate),
                _fmt(self.energy_eff_rate), self.collisions,
                self.agent_at_fault, _fmt(self.shield_interventions_per_episode)]


def _fmt(x: float) -> str:
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return repr(float(x))


def episode_seeds(base_seed: int, index: int) -> tuple[int, int]:
    """Independent map and traffic seeds for episode `index` of a run."""
    ss = np.random.SeedSequence(entropy=base_seed + index)
    a, b = ss.generate_state(2, dtype=np.uint64)
    return int(a % (2 ** 62)), int(b % (2 ** 62))


def _episode_partial(args):
    policy, base_seed, index, config_dict = args
    config = SimConfig.from_dict(config_dict)
    map_seed, traffic_seed = episode_seeds(base_seed, index)
    log = run_episode(map_seed, traffic_seed, policy, config, collect_frames=False)
    t = log.outcome["totals"]
    return {
        "index": index,
        "frames": log.outcome["frames"],
        "sum_v": t["sum_v"],
        "sum_pos_a": t["sum_pos_a"],
        "collision": 1 if log.outcome["collision"] else 0,
        "at_fault": 1 if log.outcome["agent_at_fault"] else 0,
        "interventions": t["shield_interventions"],
    }


def summarize(policy: str, partials: list[dict]) -> MetricsSummary:
    """Order-independent aggregation of per-episode partials."""
    partials = sorted(partials, key=lambda p: p["index"])
    episodes = len(partials)
    frames = sum(p["frames"] for p in partials)
    sum_v = sum(p["sum_v"] for p in partials)
    sum_pos_a = sum(p["sum_pos_a"] for p in partials)
    collisions = sum(p["collision"] for p in partials)
    at_fault = sum(p["at_fault"] for p in partials)
    interventions = sum(p["interventions"] for p in partials)

    avg_v_mps = sum_v / frames if frames else 0.0
    avg_v_kmh = avg_v_mps * 3.6
    if collisions == 0:
        rate = 0.0
    elif avg_v_kmh > 0.0:
        rate = (collisions / episodes * 100.0) / avg_v_kmh
    else:
        rate = math.inf
    if avg_v_mps > 0.0:
        eff = (sum_pos_a / frames) / avg_v_mps
    else:
        eff = math.nan  # undefined for a policy that never moves
    return MetricsSummary(
        policy=policy, episodes=episodes,
        avg_velocity_kmh=avg_v_kmh, collision_rate=rate, energy_eff_rate=eff,
        collisions=collisions, agent_at_fault=at_fault,
        shield_interventions_per_episode=interventions / episodes if episodes else 0.0,
    )


def evaluate(policy: str, n_episodes: int, base_seed: int,
             config: SimConfig | None = None,
             workers: int | None = None) -> MetricsSummary:
    """Run n_episodes with seeds base_seed..base_seed+n-1 and aggregate.

    Episodes are independent, so they run on a process pool; partials are
    merged in seed order, making the result worker-count independent.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    config = config or SimConfig()
    config.validate()
    cfg_dict = config.to_dict()
    tasks = [(policy, base_seed, i, cfg_dict) for i in range(n_episodes)]
    partials = _run_tasks(tasks, workers)
    return summarize(policy, partials)


def compare(policies: list[str], n_episodes: int, base_seed: int,
            config: SimConfig | None = None,
            workers: int | None = None) -> list[MetricsSummary]:
    """Evaluate each policy on the identical episode seed set."""
    if not policies:
        raise ValueError("need at least one policy")
    config = config or SimConfig()
    cfg_dict = config.to_dict()
    tasks = []
    for policy in policies:
        tasks += [(policy, base_seed, i, cfg_dict) for i in range(n_episodes)]
    partials = _run_tasks(tasks, workers)
    out = []
    per_policy = len(partials) // len(policies) if policies else 0
    for k, policy in enumerate(policies):
        out.append(summarize(policy, partials[k * per_policy:(k + 1) * per_policy]))
    return out


def _run_tasks(tasks, workers: int | None):
    workers = workers if workers is not None else (os.cpu_count() or 1)
    if workers <= 1 or len(tasks) <= 1:
        return [_episode_partial(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_episode_partial, tasks, chunksize=4))


def to_csv(rows: list[MetricsSummary]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow(r.row())
    return buf.getvalue()


def from_csv(text: str) -> list[MetricsSummary]:
    reader = csv.DictReader(io.StringIO(text))
    out = []
    for rec in reader:
        out.append(MetricsSummary(
            policy=rec["policy"], episodes=int(rec["episodes"]),
            avg_velocity_kmh=float(rec["avg_velocity_kmh"]),
            collision_rate=float(rec["collision_rate"]),
            energy_eff_rate=float(rec["energy_eff_rate"]),
            collisions=int(rec["collisions"]),
            agent_at_fault=int(rec["agent_at_fault"]),
            shield_interventions_per_episode=float(
                rec["shield_interventions_per_episode"]),
        ))
    return out


def format_table(rows: list[MetricsSummary]) -> str:
    head = ["policy", "avg velocity [km/h]", "collision rate", "energy eff. rate",
            "collisions", "at fault", "shield/ep"]
    table = [head]
    for r in rows:
        table.append([r.policy, f"{r.avg_velocity_kmh:.2f}",
                      f"{r.collision_rate:.4f}", f"{r.energy_eff_rate:.4f}",
                      str(r.collisions), str(r.agent_at_fault),
                      f"{r.shield_interventions_per_episode:.1f}"])
    widths = [max(len(row[i]) for row in table) for i in range(len(head))]
    lines = []
    for row in table:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines)
