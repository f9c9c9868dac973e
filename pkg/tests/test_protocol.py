"""Environment protocol: wire behavior and in-process equivalence."""

import socket

import pytest

from shieldsim.config import SimConfig
from shieldsim.episode import build_network
from shieldsim.metrics import episode_seeds
from shieldsim.observation import encode_full
from shieldsim.policies import ACTIONS
from shieldsim.protocol import EnvClient, ProtocolError, Session, serve
from shieldsim.rewards import RewardInputs, compute_reward
from shieldsim.shield import shield_decision
from shieldsim.world import spawn_traffic, step_world


@pytest.fixture(scope="module")
def mini_cfg():
    cfg = SimConfig()
    cfg.use_minimal_map = True
    cfg.car_range = (3, 3)
    cfg.ped_range = (2, 2)
    cfg.episode_seconds = 12.0
    return cfg


@pytest.fixture(scope="module")
def server(mini_cfg):
    srv = serve("127.0.0.1:0", mini_cfg, background=True)
    yield srv
    srv.shutdown()
    srv.server_close()


def _client(server):
    host, port = server.server_address
    return EnvClient(host, port)


def test_reset_shape(server, mini_cfg):
    c = _client(server)
    out = c.reset(seed=7)
    assert out["done"] is False
    assert len(out["obs"]) == 4 * mini_cfg.encoder.n_cells + 1
    assert out["v"] == 1
    c.close()


def test_step_before_reset_errors(server):
    c = _client(server)
    out = c.step(3)
    assert "error" in out and "reset" in out["error"]
    c.close()


def test_invalid_action_and_malformed_json(server):
    c = _client(server)
    c.reset(seed=1)
    out = c.call({"cmd": "step", "action_index": 99})
    assert "error" in out
    # malformed line: session must answer with an error and survive
    c.file.write(b"{not json}\n")
    c.file.flush()
    line = c.file.readline()
    assert b"error" in line
    out = c.step(3)
    assert "obs" in out
    c.close()


def test_timeout_done(server, mini_cfg):
    c = _client(server)
    c.reset(seed=3)
    done = False
    for _ in range(mini_cfg.max_frames + 1):
        out = c.step(3)
        if "error" in out:
            raise AssertionError(out)
        if out["done"]:
            done = True
            break
    assert done
    assert out["info"]["done_reason"] in ("timeout", "collision")
    # stepping after done errors until the next reset
    out = c.step(3)
    assert "error" in out
    c.reset(seed=4)
    assert "obs" in c.step(3)
    c.close()


def test_config_echo(server, mini_cfg):
    c = _client(server)
    out = c.call({"cmd": "config"})
    assert out["actions"] == list(ACTIONS)
    assert out["obs_len"] == 4 * mini_cfg.encoder.n_cells + 1
    assert out["config"]["use_minimal_map"] is True
    c.close()


def test_protocol_in_process_equivalence(server, mini_cfg):
    """Scripted always-accelerate client == in-process loop, bit for bit."""
    seed = 21
    c = _client(server)
    out = c.reset(seed=seed)
    wire = [out["obs"]]
    rewards = []
    dones = []
    for _ in range(64):
        out = c.step(5)
        wire.append(out["obs"])
        rewards.append(out["reward"])
        dones.append(out["done"])
        if out["done"]:
            break
    c.close()

    # in-process mirror of the session semantics
    map_seed, traffic_seed = episode_seeds(seed, 0)
    net = build_network(map_seed, mini_cfg)
    world = spawn_traffic(net, traffic_seed, config=mini_cfg)
    import dataclasses
    rparams = dataclasses.replace(mini_cfg.reward, fps=mini_cfg.fps)
    obs, aux = encode_full(world, world.agent)
    local = [obs.to_vector()]
    local_rewards = []
    prev = None
    import math
    for _ in range(64):
        dec = shield_decision(world, aux, ACTIONS[5], mini_cfg.shield, prev)
        prev = (dec.d_intersection - dec.d_braking
                if math.isfinite(dec.d_intersection) else None)
        world, ev = step_world(world, dec.final_accel)
        obs, aux = encode_full(world, world.agent)
        local.append(obs.to_vector())
        rin = RewardInputs(v=world.agent.v, a_agent=ACTIONS[5],
                           a_shield=dec.final_accel,
                           on_intersection=aux.on_intersection,
                           collision=ev.collision, near_collision=ev.near_collision,
                           d_la=mini_cfg.encoder.d_la, d_free=aux.d_free)
        local_rewards.append(compute_reward(rin, rparams).total)
        if ev.episode_done:
            break
    assert wire == local
    assert rewards == local_rewards


def test_sessions_isolated(server):
    a = _client(server)
    b = _client(server)
    oa = a.reset(seed=100)
    ob = b.reset(seed=101)
    assert oa["obs"] != ob["obs"] or oa["info"] != ob["info"]
    sa = [a.step(5)["obs"] for _ in range(5)]
    sb = [b.step(3)["obs"] for _ in range(5)]
    # replay session a's episode in a fresh connection: same trajectory
    c = _client(server)
    c.reset(seed=100)
    sc = [c.step(5)["obs"] for _ in range(5)]
    assert sa == sc
    a.close()
    b.close()
    c.close()


def test_ten_concurrent_sessions_at_speed(server, mini_cfg):
    """Ten parallel sessions each simulate 10 s; the server must finish the
    whole batch at >= 10x real time per session (i.e. within the 10 s the
    batch would take a single real-time session)."""
    import time
    from concurrent.futures import ThreadPoolExecutor

    frames = 10 * mini_cfg.fps

    def one(seed):
        c = _client(server)
        c.reset(seed=seed)
        for _ in range(frames):
            out = c.step(5)
            if out["done"]:
                c.reset(seed=seed + 1000)
        c.close()
        return True

    t0 = time.time()
    with ThreadPoolExecutor(max_workers=10) as pool:
        assert all(pool.map(one, range(10)))
    wall = time.time() - t0
    assert wall < 10.0, f"10 sessions x 10 s of simulation took {wall:.1f}s"


def test_session_reset_counter_without_seed(mini_cfg):
    s = Session(mini_cfg)
    first = s.reset()
    assert first["info"]["seed"] == 0
    second = s.reset()
    assert second["info"]["seed"] == 1


def test_bind_failure_raises(mini_cfg, server):
    host, port = server.server_address
    sock = socket.socket()
    # binding the same port again must fail cleanly
    with pytest.raises(ProtocolError):
        serve(f"{host}:{port}", mini_cfg, background=True)
