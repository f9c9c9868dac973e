"""Simulation configuration: one nested dataclass tree, JSON round-trippable.

The JSON layout is the documented config-file format consumed by the CLI
(`--config sim.json`), the servers, and the evaluation harness.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from .network import MapGenParams

SPEED_LIMIT = 50.0 / 3.6  # m/s, the 50 km/h urban limit used everywhere
EMERGENCY_DECEL = 7.0  # m/s^2, the reserved hard-brake action magnitude


@dataclass(frozen=True)
class IdmParams:
    v0: float = SPEED_LIMIT  # desired speed
    T: float = 1.5  # safe time headway, s
    a_max: float = 3.0  # max acceleration, m/s^2
    b: float = 3.0  # comfortable deceleration, m/s^2
    s0: float = 2.0  # minimum gap, m
    delta: float = 4.0

    def validate(self) -> None:
        if min(self.v0, self.T, self.a_max, self.b, self.s0) <= 0 or self.delta < 1:
            raise ValueError("IdmParams out of range")


@dataclass(frozen=True)
class PedestrianConfig:
    speed: float = 1.4  # walking speed, m/s
    min_gap_ttc: float = 3.0  # required time gap before stepping onto the road
    idle_range: tuple[float, float] = (3.0, 25.0)
    radius: float = 0.3


@dataclass(frozen=True)
class VehicleConfig:
    length: float = 4.5
    width: float = 2.0


@dataclass(frozen=True)
class IERConfig:
    """Observation grid geometry and monitoring horizons."""
    d_la: float = 100.0  # lookahead along the route, m
    cell_length: float = 2.0
    t_max: float = 10.0  # normalization cap, s
    monitor_range: float = 50.0  # D_m
    arrival_horizon: float = 6.0  # T_a

    def validate(self) -> None:
        if min(self.d_la, self.cell_length, self.t_max,
               self.monitor_range, self.arrival_horizon) <= 0:
            raise ValueError("IERConfig fields must be positive")
        n = self.d_la / self.cell_length
        if abs(n - round(n)) > 1e-9:
            raise ValueError("d_la must be divisible by cell_length")

    @property
    def n_cells(self) -> int:
        return int(round(self.d_la / self.cell_length))


@dataclass(frozen=True)
class ShieldConfig:
    d_threshold: float = 7.0
    emergency_decel: float = EMERGENCY_DECEL

    def validate(self) -> None:
        if self.d_threshold <= 0:
            raise ValueError("d_threshold must be positive")


@dataclass(frozen=True)
class RewardParams:
    k_c: float = 3.0
    k_c_abs: float = 25.0
    k_v_upper: float = 0.06
    k_v_lower: float = 0.03
    k_a: float = 0.01
    k_intersection: float = 0.2
    k_shield: float = 0.1
    k_dist: float = 0.2
    v_upper: float = SPEED_LIMIT
    fps: int = 24


@dataclass(frozen=True)
class PolicyParams:
    tau_go: float = 5.0  # TTC above which the rule-based agent accelerates
    tau_brake: float = 2.8
    d_creep: float = 15.0
    v_creep: float = 2.0
    # the observation-driven IDM: a touch stronger than the background
    # profile so the round-down onto the discrete action set does not halve
    # every ramp-up (chosen value stays <= the continuous output)
    idm_a_max: float = 4.2
    idm_b: float = 3.0


@dataclass
class SimConfig:
    fps: int = 24
    episode_seconds: float = 120.0
    car_range: tuple[int, int] = (30, 120)
    ped_range: tuple[int, int] = (30, 120)
    near_collision_gap: float = 0.5
    near_collision_ttc: float = 0.25
    idm: IdmParams = field(default_factory=IdmParams)
    pedestrian: PedestrianConfig = field(default_factory=PedestrianConfig)
    vehicle: VehicleConfig = field(default_factory=VehicleConfig)
    encoder: IERConfig = field(default_factory=IERConfig)
    shield: ShieldConfig = field(default_factory=ShieldConfig)
    reward: RewardParams = field(default_factory=RewardParams)
    policy: PolicyParams = field(default_factory=PolicyParams)
    map_params: MapGenParams = field(default_factory=MapGenParams)
    use_minimal_map: bool = False
    disable_yielding: bool = False  # test hook: background drivers ignore priority

    @property
    def dt(self) -> float:
        return 1.0 / self.fps

    @property
    def max_frames(self) -> int:
        return int(round(self.episode_seconds * self.fps))

    def validate(self) -> None:
        if self.fps <= 0 or self.episode_seconds <= 0:
            raise ValueError("fps and episode_seconds must be positive")
        for rng in (self.car_range, self.ped_range):
            if rng[0] < 0 or rng[1] < rng[0]:
                raise ValueError(f"bad count range {rng}")
        self.idm.validate()
        self.encoder.validate()
        self.shield.validate()
        self.map_params.validate()

    # ---- JSON ------------------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["car_range"] = list(self.car_range)
        d["ped_range"] = list(self.ped_range)
        d["pedestrian"]["idle_range"] = list(self.pedestrian.idle_range)
        d["map_params"]["block_range"] = list(self.map_params.block_range)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        def build(tp, sub):
            kwargs = dict(sub)
            for f in fields(tp):
                if f.name in kwargs and isinstance(kwargs[f.name], list):
                    kwargs[f.name] = tuple(kwargs[f.name])
            known = {f.name for f in fields(tp)}
            unknown = set(kwargs) - known
            if unknown:
                raise ValueError(f"unknown {tp.__name__} keys: {sorted(unknown)}")
            return tp(**kwargs)

        data = dict(data)
        nested = {
            "idm": IdmParams, "pedestrian": PedestrianConfig, "vehicle": VehicleConfig,
            "encoder": IERConfig, "shield": ShieldConfig, "reward": RewardParams,
            "policy": PolicyParams, "map_params": MapGenParams,
        }
        kwargs = {}
        for key, value in data.items():
            if key in nested:
                kwargs[key] = build(nested[key], value)
            elif isinstance(value, list):
                kwargs[key] = tuple(value)
            else:
                kwargs[key] = value
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SimConfig":
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, overrides: dict) -> "SimConfig":
        """New config with a (possibly nested) dict of overrides applied."""
        base = self.to_dict()

        def merge(dst, src):
            for k, v in src.items():
                if isinstance(v, dict) and isinstance(dst.get(k), dict):
                    merge(dst[k], v)
                else:
                    dst[k] = v
        merge(base, overrides or {})
        return SimConfig.from_dict(base)
