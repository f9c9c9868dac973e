"""Environment session server: newline-delimited JSON over a TCP stream.

One session per connection, reset/step semantics mirroring the in-process
episode loop exactly (same seed derivation, same shield, same reward), so an
external learner sees byte-identical observations and rewards. See
docs/protocol.md for the wire schema.
"""

from __future__ import annotations

import dataclasses
import json
import math
import socket
import socketserver
import threading

from .config import SimConfig
from .episode import build_network
from .metrics import episode_seeds
from .observation import encode_full
from .policies import ACTIONS
from .rewards import RewardInputs, compute_reward
from .shield import shield_decision
from .world import spawn_traffic, step_world

SCHEMA_VERSION = 1


class ProtocolError(ValueError):
    pass


class Session:
    """One environment instance driven through reset/step commands."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.world = None
        self.aux = None
        self.obs = None
        self.prev_margin = None
        self.episode_counter = 0
        self.done = True
        self.rparams = dataclasses.replace(config.reward, fps=config.fps)

    def reset(self, seed: int | None = None, overrides: dict | None = None) -> dict:
        if overrides:
            self.config = self.config.with_overrides(overrides)
            self.rparams = dataclasses.replace(self.config.reward, fps=self.config.fps)
        if seed is None:
            seed = self.episode_counter
        self.episode_counter += 1
        map_seed, traffic_seed = episode_seeds(int(seed), 0)
        net = build_network(map_seed, self.config)
        self.world = spawn_traffic(net, traffic_seed, config=self.config)
        self.obs, self.aux = encode_full(self.world, self.world.agent)
        self.prev_margin = None
        self.done = False
        return {
            "v": SCHEMA_VERSION,
            "obs": self.obs.to_vector(),
            "done": False,
            "info": {"seed": int(seed), "map_seed": map_seed,
                     "traffic_seed": traffic_seed, "frame": 0},
        }

    def step(self, action_index: int) -> dict:
        if self.world is None:
            raise ProtocolError("no active episode; send reset first")
        if self.done:
            raise ProtocolError("episode finished; send reset first")
        if not isinstance(action_index, int) or not 0 <= action_index < len(ACTIONS):
            raise ProtocolError(f"action_index must be in 0..{len(ACTIONS) - 1}")
        world = self.world
        agent = world.agent
        proposed = ACTIONS[action_index]
        dec = shield_decision(world, self.aux, proposed, self.config.shield,
                              self.prev_margin)
        self.prev_margin = (dec.d_intersection - dec.d_braking
                            if math.isfinite(dec.d_intersection) else None)
        world, events = step_world(world, dec.final_accel)
        self.obs, self.aux = encode_full(world, agent)
        rin = RewardInputs(
            v=agent.v, a_agent=proposed, a_shield=dec.final_accel,
            on_intersection=self.aux.on_intersection,
            collision=events.collision, near_collision=events.near_collision,
            d_la=self.config.encoder.d_la, d_free=self.aux.d_free)
        rb = compute_reward(rin, self.rparams)
        self.done = events.episode_done
        return {
            "v": SCHEMA_VERSION,
            "obs": self.obs.to_vector(),
            "reward": rb.total,
            "done": events.episode_done,
            "info": {
                "frame": world.frame,
                "shield_triggered": dec.triggered,
                "executed_accel": dec.final_accel,
                "collision": events.collision,
                "near_collision": events.near_collision,
                "agent_at_fault": events.agent_at_fault,
                "done_reason": events.done_reason,
                "reward_breakdown": {
                    "collision": rb.r_collision,
                    "velocity": rb.r_velocity,
                    "acceleration": rb.r_acceleration,
                    "intersection": rb.r_intersection,
                    "shield": rb.r_shield,
                    "distance": rb.r_distance,
                },
            },
        }

    def handle(self, request: dict) -> dict:
        cmd = request.get("cmd")
        if cmd == "reset":
            return self.reset(request.get("seed"), request.get("overrides"))
        if cmd == "step":
            return self.step(request.get("action_index"))
        if cmd == "config":
            return {"v": SCHEMA_VERSION, "config": self.config.to_dict(),
                    "actions": list(ACTIONS), "obs_len": 4 * self.config.encoder.n_cells + 1}
        if cmd == "close":
            return {"v": SCHEMA_VERSION, "closed": True}
        raise ProtocolError(f"unknown cmd {cmd!r}")


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        session = Session(self.server.sim_config)  # type: ignore[attr-defined]
        for raw in self.rfile:
            line = raw.strip()
            if not line:
                continue
            try:
                request = json.loads(line)
                response = session.handle(request)
            except (ProtocolError, ValueError, KeyError, TypeError) as exc:
                response = {"v": SCHEMA_VERSION, "error": str(exc)}
            except Exception as exc:  # session survives; report and continue
                response = {"v": SCHEMA_VERSION, "error": f"internal: {exc}"}
            try:
                self.wfile.write(json.dumps(response, sort_keys=True).encode() + b"\n")
                self.wfile.flush()
            except (BrokenPipeError, ConnectionResetError):
                break
            if request.get("cmd") == "close":
                break


class EnvServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, addr: tuple[str, int], config: SimConfig):
        super().__init__(addr, _Handler)
        self.sim_config = config


def serve(bind: str = "127.0.0.1:58460", config: SimConfig | None = None,
          background: bool = False) -> EnvServer:
    """Start the session server; blocks unless background=True."""
    host, _, port = bind.rpartition(":")
    try:
        server = EnvServer((host or "127.0.0.1", int(port)), config or SimConfig())
    except OSError as exc:
        raise ProtocolError(f"cannot bind {bind}: {exc}") from exc
    if background:
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        return server
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return server


class EnvClient:
    """Minimal blocking client used by tests and the trainer smoke checks."""

    def __init__(self, host: str = "127.0.0.1", port: int = 58460, timeout: float = 30.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.file = self.sock.makefile("rwb")

    def call(self, request: dict) -> dict:
        self.file.write(json.dumps(request).encode() + b"\n")
        self.file.flush()
        line = self.file.readline()
        if not line:
            raise ProtocolError("server closed the connection")
        return json.loads(line)

    def reset(self, seed: int | None = None, overrides: dict | None = None) -> dict:
        req = {"cmd": "reset"}
        if seed is not None:
            req["seed"] = seed
        if overrides:
            req["overrides"] = overrides
        return self.call(req)

    def step(self, action_index: int) -> dict:
        return self.call({"cmd": "step", "action_index": action_index})

    def close(self) -> None:
        try:
            self.call({"cmd": "close"})
        except ProtocolError:
            pass
        self.file.close()
        self.sock.close()
