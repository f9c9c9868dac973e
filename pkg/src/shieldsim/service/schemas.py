"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str


class MapRequest(BaseModel):
    seed: int = 0
    minimal: bool = False
    params: dict | None = None  # MapGenParams overrides


class EpisodeRequest(BaseModel):
    policy: str
    map_seed: int = 0
    traffic_seed: int = 0
    overrides: dict | None = None
    include_frames: bool = False
    max_frames_in_response: int = Field(default=3000, ge=0)


class EpisodeResponse(BaseModel):
    outcome: dict
    header: dict
    frames: list[dict] | None = None


class EvaluateRequest(BaseModel):
    policy: str
    episodes: int = Field(default=10, ge=1)
    base_seed: int = 0
    overrides: dict | None = None
    workers: int | None = None


class CompareRequest(BaseModel):
    policies: list[str]
    episodes: int = Field(default=10, ge=1)
    base_seed: int = 0
    overrides: dict | None = None
    workers: int | None = None


class MetricsRow(BaseModel):
    policy: str
    episodes: int
    avg_velocity_kmh: float
    collision_rate: float
    energy_eff_rate: float | None
    collisions: int
    agent_at_fault: int
    shield_interventions_per_episode: float


class SessionCreateRequest(BaseModel):
    overrides: dict | None = None


class SessionCreateResponse(BaseModel):
    session_id: str
    obs_len: int
    actions: list[float]


class ResetRequest(BaseModel):
    seed: int | None = None
    overrides: dict | None = None


class StepRequest(BaseModel):
    action_index: int = Field(ge=0, le=5)


class StepResponse(BaseModel):
    v: int
    obs: list[float]
    reward: float | None = None
    done: bool
    info: dict
