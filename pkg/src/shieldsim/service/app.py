"""FastAPI service wrapping the simulator core.

Long-running, multi-client surface: map generation, episode runs, batch
evaluation, and HTTP-driven environment sessions (the ndjson TCP protocol
remains available via `shieldsim serve` for stream-oriented learners).
"""

from __future__ import annotations

import math
import threading
import uuid

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..config import SimConfig
from ..episode import run_episode
from ..metrics import compare, evaluate
from ..network import MapGenParams, generate_map, minimal_map
from ..policies import POLICY_NAMES
from ..protocol import ProtocolError, Session
from .schemas import (CompareRequest, EpisodeRequest, EpisodeResponse,
                      EvaluateRequest, HealthResponse, MapRequest, MetricsRow,
                      ResetRequest, SessionCreateRequest, SessionCreateResponse,
                      StepRequest, StepResponse)


def _row(summary) -> MetricsRow:
    eff = summary.energy_eff_rate
    return MetricsRow(
        policy=summary.policy, episodes=summary.episodes,
        avg_velocity_kmh=summary.avg_velocity_kmh,
        collision_rate=summary.collision_rate,
        energy_eff_rate=None if math.isnan(eff) else eff,
        collisions=summary.collisions, agent_at_fault=summary.agent_at_fault,
        shield_interventions_per_episode=summary.shield_interventions_per_episode)


def create_app(config: SimConfig | None = None) -> FastAPI:
    base_config = config or SimConfig()
    app = FastAPI(title="shieldsim", version=__version__)
    sessions: dict[str, tuple[Session, threading.Lock]] = {}
    sessions_lock = threading.Lock()

    def cfg_with(overrides: dict | None) -> SimConfig:
        return base_config.with_overrides(overrides) if overrides else base_config

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(version=__version__)

    @app.post("/maps/generate")
    def maps_generate(req: MapRequest):
        if req.minimal:
            return minimal_map().to_dict()
        try:
            params = MapGenParams(**req.params) if req.params else base_config.map_params
            return generate_map(req.seed, params).to_dict()
        except (TypeError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.post("/episodes/run", response_model=EpisodeResponse)
    def episodes_run(req: EpisodeRequest):
        if req.policy not in POLICY_NAMES or req.policy == "external":
            raise HTTPException(status_code=422,
                                detail=f"policy must be one of {sorted(set(POLICY_NAMES) - {'external'})}")
        log = run_episode(req.map_seed, req.traffic_seed, req.policy,
                          cfg_with(req.overrides), collect_frames=req.include_frames)
        frames = None
        if req.include_frames:
            frames = log.frames[:req.max_frames_in_response]
        return EpisodeResponse(outcome=log.outcome, header=log.header, frames=frames)

    @app.post("/evaluate", response_model=MetricsRow)
    def evaluate_endpoint(req: EvaluateRequest):
        try:
            summary = evaluate(req.policy, req.episodes, req.base_seed,
                               cfg_with(req.overrides), workers=req.workers)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return _row(summary)

    @app.post("/compare", response_model=list[MetricsRow])
    def compare_endpoint(req: CompareRequest):
        try:
            rows = compare(req.policies, req.episodes, req.base_seed,
                           cfg_with(req.overrides), workers=req.workers)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return [_row(r) for r in rows]

    @app.post("/sessions", response_model=SessionCreateResponse)
    def create_session(req: SessionCreateRequest):
        session = Session(cfg_with(req.overrides))
        sid = uuid.uuid4().hex[:12]
        with sessions_lock:
            sessions[sid] = (session, threading.Lock())
        n = session.config.encoder.n_cells
        from ..policies import ACTIONS
        return SessionCreateResponse(session_id=sid, obs_len=4 * n + 1,
                                     actions=list(ACTIONS))

    def _session(sid: str):
        with sessions_lock:
            entry = sessions.get(sid)
        if entry is None:
            raise HTTPException(status_code=404, detail="unknown session")
        return entry

    @app.post("/sessions/{sid}/reset", response_model=StepResponse)
    def session_reset(sid: str, req: ResetRequest):
        session, lock = _session(sid)
        with lock:
            out = session.reset(req.seed, req.overrides)
        return StepResponse(**out)

    @app.post("/sessions/{sid}/step", response_model=StepResponse)
    def session_step(sid: str, req: StepRequest):
        session, lock = _session(sid)
        try:
            with lock:
                out = session.step(req.action_index)
        except ProtocolError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return StepResponse(**out)

    @app.delete("/sessions/{sid}")
    def session_close(sid: str):
        with sessions_lock:
            if sessions.pop(sid, None) is None:
                raise HTTPException(status_code=404, detail="unknown session")
        return {"closed": True}

    return app


app = create_app()
