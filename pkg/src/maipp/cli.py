"""Command-line entry points.

    maipp run PLAN.json [--output DIR --workers N]   batch evaluation
    maipp gen --seed S --out DIR [--count N]         emit instance fixtures
    maipp aggregate RECORDS.jsonl                    recompute the CSV table
    maipp trace ...                                  one episode -> trace file
    maipp replay TRACE.jsonl                         re-execute + verify a trace
    maipp serve ...                                  bridge endpoint for an
                                                     external policy (stdio or
                                                     unix socket)
"""

from __future__ import annotations

import argparse
import json
import socket
import sys
from pathlib import Path

import numpy as np

from . import bridge
from .episode import Episode, EpisodeConfig, config_from_dict, config_to_dict
from .experiment import (
    ExperimentPlan,
    aggregate,
    derive_seed,
    run_plan,
    table_to_csv,
    write_outputs,
)
from .fields import FieldSpec, GroundTruth, generate_field_spec
from .planners import PlannerConfig, make_planner, run_graph_episode
from .roadmap import Roadmap, build_prm


def _instance_args(parser):
    parser.add_argument("--field-seed", type=int, default=0)
    parser.add_argument("--map-seed", type=int, default=0)
    parser.add_argument("--episode-seed", type=int, default=0)
    parser.add_argument("--agents", type=int, default=3)
    parser.add_argument("--nodes", type=int, default=200)
    parser.add_argument("--k", type=int, default=20)
    parser.add_argument("--budget", type=float, default=3.0)
    parser.add_argument("--comm-range", default="global",
                        help='"global" or a float range')
    parser.add_argument("--risk", action=argparse.BooleanOptionalAction, default=False,
                        help="enable the risk belief and hard risk masking")
    parser.add_argument("--start", choices=("shared", "uniform"), default="shared")


def _build_instance(args, episode_offset: int = 0, vary: bool = False):
    field_seed = derive_seed(args.field_seed, "ep", episode_offset) if vary else args.field_seed
    map_seed = derive_seed(args.map_seed, "ep", episode_offset) if vary else args.map_seed
    ep_seed = derive_seed(args.episode_seed, "ep", episode_offset) if vary else args.episode_seed
    spec = generate_field_spec(field_seed)
    truth = GroundTruth(spec)
    rm = build_prm(map_seed, n_nodes=args.nodes, k=args.k)
    comm = args.comm_range if args.comm_range == "global" else float(args.comm_range)
    cfg = EpisodeConfig(
        num_agents=args.agents,
        team_budget=args.budget,
        comm_range=comm,
        risk_enabled=args.risk,
        hard_risk=args.risk,
        start_mode=args.start,
    )
    return spec, truth, rm, cfg, ep_seed


def _write_trace(path, spec, rm, cfg, seed, engine):
    with open(path, "w") as fh:
        fh.write(json.dumps({
            "type": "header",
            "field_spec": json.loads(spec.to_json()),
            "roadmap": json.loads(rm.to_json()),
            "config": config_to_dict(cfg),
            "seed": seed,
        }, sort_keys=True) + "\n")
        for rec in engine.records:
            fh.write(json.dumps({"type": "round", **rec}, sort_keys=True) + "\n")
        fh.write(json.dumps({
            "type": "final",
            "cause": engine.cause,
            "final_trace": engine.final_trace(),
            "steps": engine.step_index,
            "executed_length": engine.total_executed_length(),
        }, sort_keys=True) + "\n")


def cmd_run(args) -> int:
    if args.plan:
        plan = ExperimentPlan.from_json(Path(args.plan).read_text())
    else:
        plan = ExperimentPlan()
    overrides = {}
    if args.output:
        overrides["output_dir"] = args.output
    if args.workers:
        overrides["workers"] = args.workers
    if args.instances:
        overrides["instances"] = args.instances
    if args.trials:
        overrides["trials"] = args.trials
    if args.budgets:
        overrides["budgets"] = tuple(float(b) for b in args.budgets.split(","))
    if overrides:
        plan = ExperimentPlan.from_json(json.dumps({**json.loads(plan.to_json()), **{
            k: (list(v) if isinstance(v, tuple) else v) for k, v in overrides.items()
        }}))
    def progress(done, total):
        print(f"  {done}/{total} trials", file=sys.stderr)
    records, table, code = run_plan(plan, progress=progress)
    out = write_outputs(plan, records, table)
    print(table_to_csv(table), end="")
    print(f"wrote {out / 'records.jsonl'} and {out / 'results.csv'}", file=sys.stderr)
    return code


def cmd_gen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        spec = generate_field_spec(derive_seed(args.seed, "field", i, 0))
        rm = build_prm(derive_seed(args.seed, "map", i, 0), n_nodes=args.nodes, k=args.k)
        (out / f"field_{i:03d}.json").write_text(spec.to_json() + "\n")
        (out / f"roadmap_{i:03d}.json").write_text(rm.to_json() + "\n")
    print(f"wrote {args.count} instance fixture pairs to {out}")
    return 0


def cmd_aggregate(args) -> int:
    records = [json.loads(line) for line in Path(args.records).read_text().splitlines() if line]
    table = aggregate(records)
    csv = table_to_csv(table)
    if args.out:
        Path(args.out).write_text(csv)
    else:
        print(csv, end="")
    return 0


def cmd_trace(args) -> int:
    spec, truth, rm, cfg, ep_seed = _build_instance(args)
    engine = Episode(truth, rm, cfg, seed=ep_seed)
    pconf = PlannerConfig.from_dict({"kind": args.planner, "risk_aware": args.risk})
    planner = make_planner(pconf)
    run_graph_episode(engine, planner, seed=derive_seed(args.episode_seed, "planner"))
    _write_trace(args.out, spec, rm, cfg, ep_seed, engine)
    print(f"episode done: cause={engine.cause} final_trace={engine.final_trace():.4f} "
          f"steps={engine.step_index}")
    return 0


def cmd_replay(args) -> int:
    lines = [json.loads(line) for line in Path(args.trace).read_text().splitlines() if line]
    header = lines[0]
    assert header["type"] == "header", "trace must start with a header record"
    spec = FieldSpec.from_json(json.dumps(header["field_spec"]))
    truth = GroundTruth(spec)
    rm = Roadmap.from_json(json.dumps(header["roadmap"]))
    cfg = config_from_dict(header["config"])
    engine = Episode(truth, rm, cfg, seed=header["seed"])
    engine.reset()
    rounds = [rec for rec in lines if rec["type"] == "round"]
    for rec in rounds:
        engine.step(rec["actions"])
        replayed = engine.records[-1]
        if abs(replayed["phi_eval"] - rec["phi_eval"]) > 1e-9:
            print(f"MISMATCH at step {rec['step']}: phi {replayed['phi_eval']} "
                  f"vs recorded {rec['phi_eval']}")
            return 1
    final = lines[-1]
    if final["type"] == "final" and abs(engine.final_trace() - final["final_trace"]) > 1e-9:
        print("MISMATCH: final trace")
        return 1
    print(f"replay OK: {len(rounds)} rounds, final trace {engine.final_trace():.4f}")
    return 0


def cmd_serve(args) -> int:
    engines = []
    payloads = []
    specs = []
    for e in range(args.episodes):
        spec, truth, rm, cfg, ep_seed = _build_instance(args, episode_offset=e, vary=args.vary)
        engines.append(Episode(truth, rm, cfg, seed=ep_seed))
        payloads.append(bridge.graph_payload(rm))
        specs.append((spec, rm, cfg, ep_seed))
    if args.transport == "stdio":
        reader, writer = sys.stdin.buffer, sys.stdout.buffer
        bridge.serve(reader, writer, engines, payloads)
    else:
        srv = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        srv.bind(args.socket_path)
        srv.listen(1)
        conn, _ = srv.accept()
        with conn:
            stream = conn.makefile("rwb")
            bridge.serve(stream, stream, engines, payloads)
        srv.close()
        Path(args.socket_path).unlink(missing_ok=True)
    if args.trace_out:
        spec, rm, cfg, ep_seed = specs[-1]
        _write_trace(args.trace_out, spec, rm, cfg, ep_seed, engines[-1])
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="maipp", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment plan")
    p_run.add_argument("plan", nargs="?", help="plan JSON file (defaults when omitted)")
    p_run.add_argument("--output", help="output directory override")
    p_run.add_argument("--workers", type=int)
    p_run.add_argument("--instances", type=int)
    p_run.add_argument("--trials", type=int)
    p_run.add_argument("--budgets", help="comma-separated budget list")
    p_run.set_defaults(func=cmd_run)

    p_gen = sub.add_parser("gen", help="emit field/roadmap instance fixtures")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--count", type=int, default=1)
    p_gen.add_argument("--nodes", type=int, default=200)
    p_gen.add_argument("--k", type=int, default=20)
    p_gen.set_defaults(func=cmd_gen)

    p_agg = sub.add_parser("aggregate", help="recompute the table from raw records")
    p_agg.add_argument("records")
    p_agg.add_argument("--out")
    p_agg.set_defaults(func=cmd_aggregate)

    p_trace = sub.add_parser("trace", help="run one episode and dump its trace")
    _instance_args(p_trace)
    p_trace.add_argument("--planner", default="greedy",
                         choices=("greedy", "ti_sampling"))
    p_trace.add_argument("--out", required=True)
    p_trace.set_defaults(func=cmd_trace)

    p_replay = sub.add_parser("replay", help="re-execute a trace and verify it")
    p_replay.add_argument("trace")
    p_replay.set_defaults(func=cmd_replay)

    p_serve = sub.add_parser("serve", help="serve episodes to an external policy")
    _instance_args(p_serve)
    p_serve.add_argument("--episodes", type=int, default=1)
    p_serve.add_argument("--vary", action=argparse.BooleanOptionalAction, default=False,
                         help="derive fresh field/map/episode seeds per episode")
    p_serve.add_argument("--transport", choices=("stdio", "socket"), default="stdio")
    p_serve.add_argument("--socket-path", default="/tmp/maipp-bridge.sock")
    p_serve.add_argument("--trace-out", help="write the last episode's trace here")
    p_serve.set_defaults(func=cmd_serve)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
