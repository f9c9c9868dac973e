"""Command-line interface: thin dispatch onto the library.

    shieldsim generate-map --seed 7 --out map.json
    shieldsim run --policy ier-idm --map-seed 3 --traffic-seed 11 --log ep.jsonl
    shieldsim evaluate --policy ttc --episodes 100 --seed 0 --out metrics.csv
    shieldsim compare --policies ttc,ttc-creep,ier-acc,ier-idm --episodes 100
    shieldsim replay --log ep.jsonl --verify
    shieldsim safety-batch --scenarios 10000
    shieldsim serve --bind 127.0.0.1:58460
    shieldsim serve-http --bind 127.0.0.1:8000
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import SimConfig
from .episode import EpisodeLog, run_episode, verify_log
from .metrics import compare, evaluate, format_table, to_csv
from .network import MapGenParams, generate_map, minimal_map, validate_network


def _load_config(path: str | None) -> SimConfig:
    if not path:
        return SimConfig()
    with open(path) as fh:
        return SimConfig.from_json(fh.read())


def cmd_generate_map(args) -> int:
    if args.minimal:
        net = minimal_map()
    else:
        cfg = _load_config(args.config)
        params = cfg.map_params if args.config else MapGenParams()
        net = generate_map(args.seed, params)
    problems = validate_network(net)
    if problems:
        print("validation problems:", *problems[:5], sep="\n  ", file=sys.stderr)
        return 1
    text = json.dumps(net.to_dict(), indent=1, sort_keys=True)
    if args.out == "-":
        print(text)
    else:
        with open(args.out, "w") as fh:
            fh.write(text)
        print(f"wrote {args.out}: {len(net.lanes)} lanes, "
              f"{len(net.intersections)} intersections, {len(net.buildings)} buildings")
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args.config)
    log = run_episode(args.map_seed, args.traffic_seed, args.policy, cfg)
    if args.log:
        log.save(args.log)
    o = log.outcome
    t = o["totals"]
    avg_v = t["sum_v"] / max(o["frames"], 1) * 3.6
    print(f"{args.policy}: {o['frames']} frames, done={o['done_reason']}, "
          f"collision={o['collision']}, at_fault={o['agent_at_fault']}, "
          f"avg_v={avg_v:.1f} km/h, reward={t['reward']:.2f}, "
          f"shield_interventions={t['shield_interventions']}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args.config)
    summary = evaluate(args.policy, args.episodes, args.seed, cfg,
                       workers=args.workers)
    text = to_csv([summary])
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(format_table([summary]))
    return 0


def cmd_compare(args) -> int:
    cfg = _load_config(args.config)
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    rows = compare(policies, args.episodes, args.seed, cfg, workers=args.workers)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(to_csv(rows))
    print(format_table(rows))
    return 0


def cmd_replay(args) -> int:
    log = EpisodeLog.load(args.log)
    if args.verify:
        ok, msg = verify_log(log)
        print(("PASS" if ok else "FAIL") + f": {msg}")
        return 0 if ok else 1
    fresh = None
    from .episode import replay_episode
    fresh = replay_episode(log)
    print(f"replayed {fresh.outcome['frames']} frames, "
          f"done={fresh.outcome['done_reason']}")
    return 0


def cmd_safety_batch(args) -> int:
    from .scenarios import run_shield_batch
    cfg = _load_config(args.config)
    total = run_shield_batch(range(args.start, args.start + args.scenarios), cfg)
    print(json.dumps(total, indent=1))
    ok = total["violations"] == 0 and total["at_fault"] == 0
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_serve(args) -> int:
    from .protocol import serve
    cfg = _load_config(args.config)
    print(f"env protocol server on {args.bind} (ndjson over TCP)")
    serve(args.bind, cfg)
    return 0


def cmd_serve_http(args) -> int:
    import uvicorn
    from .service.app import create_app
    cfg = _load_config(args.config)
    host, _, port = args.bind.rpartition(":")
    uvicorn.run(create_app(cfg), host=host or "127.0.0.1", port=int(port))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="shieldsim", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("generate-map", help="generate a road network as JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="map.json")
    p.add_argument("--minimal", action="store_true")
    p.add_argument("--config")
    p.set_defaults(fn=cmd_generate_map)

    p = sub.add_parser("run", help="run one episode")
    p.add_argument("--policy", required=True)
    p.add_argument("--map-seed", type=int, default=0)
    p.add_argument("--traffic-seed", type=int, default=0)
    p.add_argument("--config")
    p.add_argument("--log", help="write the episode log (jsonl)")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("evaluate", help="run a seeded episode batch")
    p.add_argument("--policy", required=True)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.add_argument("--out", help="metrics csv path")
    p.add_argument("--workers", type=int)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("compare", help="paired-seed comparison table")
    p.add_argument("--policies", required=True, help="comma separated")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--workers", type=int)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("replay", help="re-run an episode from its log")
    p.add_argument("--log", required=True)
    p.add_argument("--verify", action="store_true",
                   help="byte-compare the fresh log against the file")
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("safety-batch", help="randomized occluded-crossing shield runs")
    p.add_argument("--scenarios", type=int, default=1000)
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--config")
    p.set_defaults(fn=cmd_safety_batch)

    p = sub.add_parser("serve", help="ndjson-over-TCP environment server")
    p.add_argument("--bind", default="127.0.0.1:58460")
    p.add_argument("--config")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("serve-http", help="FastAPI service")
    p.add_argument("--bind", default="127.0.0.1:8000")
    p.add_argument("--config")
    p.set_defaults(fn=cmd_serve_http)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
