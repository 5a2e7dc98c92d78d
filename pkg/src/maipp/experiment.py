"""Batch evaluation harness: seeded instances, trial grids, CSV tables.

A plan enumerates (instance, trial, planner, budget, comm range) cells. Each
instance is a ground-truth field plus a PRM; each trial runs one episode to
termination and records the final evaluation-belief trace. Risk-unaware
planners run on a roadmap with ground-truth-risky nodes stripped (the
protocol used when a method cannot model risk itself). Every seed is derived
deterministically from (base_seed, role, indices), so reruns reproduce the
result table byte-for-byte.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from .episode import ContinuousEpisode, Episode, EpisodeConfig
from .fields import FieldSpec, GenerationConfig, GroundTruth, generate_field_spec
from .gp import KernelParams
from .planners import PlannerConfig, SgaRrtPlanner, make_planner, run_continuous_episode, run_graph_episode
from .roadmap import Roadmap, build_prm, dijkstra_from


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from a mixed tuple of ints/strings."""
    ints = []
    for p in parts:
        if isinstance(p, str):
            ints.extend(p.encode())
        else:
            ints.append(int(p))
    return int(np.random.SeedSequence(ints).generate_state(1, dtype=np.uint64)[0] >> 1)


class InstanceRejected(RuntimeError):
    """Risk stripping would remove the start node (or gut the roadmap)."""


@dataclass(frozen=True)
class ExperimentPlan:
    instances: int = 30
    trials: int = 10
    budgets: tuple = (2.0, 3.0, 4.0, 5.0)
    comm_ranges: tuple = ("global",)
    planners: tuple = (
        {"name": "sga_rrt_long", "kind": "sga_rrt", "rrt_length_range": (0.9, 1.0), "risk_aware": False},
        {"name": "greedy", "kind": "greedy", "risk_aware": False},
        {"name": "ti", "kind": "ti_sampling", "risk_aware": False},
        {"name": "ti_risk", "kind": "ti_sampling", "risk_aware": True},
    )
    num_agents: int = 3
    prm_nodes: int = 200
    prm_k: int = 20
    base_seed: int = 0
    output_dir: str = "results"
    workers: int = 1
    risk_threshold: float = 0.7
    write_traces: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @staticmethod
    def from_json(text: str) -> "ExperimentPlan":
        doc = json.loads(text)
        for key in ("budgets", "comm_ranges", "planners"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return ExperimentPlan(**doc)

    def validate(self):
        if self.instances < 1 or self.trials < 1:
            raise ValueError("instances and trials must be >= 1")
        if not self.budgets or not self.comm_ranges or not self.planners:
            raise ValueError("budgets, comm_ranges and planners must be non-empty")
        names = [p["name"] for p in self.planners]
        if len(set(names)) != len(names):
            raise ValueError("planner names must be unique")


def strip_risky_nodes(rm: Roadmap, node_risk: np.ndarray, threshold: float) -> Roadmap:
    """Remove nodes whose (ground-truth) risk clears the threshold.

    Surviving edges are kept, connectivity is repaired as in construction.
    Node 0 is the shared start and must survive; otherwise the instance is
    rejected for resampling.
    """
    node_risk = np.asarray(node_risk, dtype=float)
    keep = np.flatnonzero(node_risk < threshold)
    if 0 not in keep:
        raise InstanceRejected("start node sits inside a risk zone")
    if len(keep) < 2:
        raise InstanceRejected("stripping removed nearly every node")
    remap = {int(old): new for new, old in enumerate(keep)}
    adj = [set() for _ in keep]
    for u in keep:
        for v in rm.neighbors[u]:
            if v in remap:
                adj[remap[u]].add(remap[v])
                adj[remap[int(v)]].add(remap[int(u)])
    from .roadmap import _repair_connectivity

    nodes = rm.nodes[keep].copy()
    _repair_connectivity(nodes, adj)
    return Roadmap(nodes=nodes, neighbors=tuple(tuple(sorted(s)) for s in adj), seed=rm.seed)


def build_instance(plan: ExperimentPlan, instance: int, risk_aware: bool):
    """Ground truth + roadmap for one instance; stripped for risk-unaware."""
    for retry in range(8):
        field_seed = derive_seed(plan.base_seed, "field", instance, retry)
        map_seed = derive_seed(plan.base_seed, "map", instance, retry)
        spec = generate_field_spec(field_seed)
        truth = GroundTruth(spec)
        rm = build_prm(map_seed, n_nodes=plan.prm_nodes, k=plan.prm_k)
        if not risk_aware:
            try:
                rm = strip_risky_nodes(rm, truth.eval_risk(rm.nodes), plan.risk_threshold)
            except InstanceRejected:
                continue
        else:
            # keep pairing consistent: a start node inside a risk zone would
            # reject the stripped variant, so skip it for everyone
            if truth.eval_risk(rm.nodes[0]) >= plan.risk_threshold:
                continue
        return spec, truth, rm
    raise InstanceRejected(f"instance {instance}: no viable sample after retries")


def episode_config(plan: ExperimentPlan, planner_doc: dict, budget: float, comm_range) -> EpisodeConfig:
    risk_aware = bool(planner_doc.get("risk_aware", False))
    return EpisodeConfig(
        num_agents=plan.num_agents,
        team_budget=float(budget),
        comm_range=comm_range,
        risk_enabled=risk_aware,
        hard_risk=risk_aware,
        risk_threshold=plan.risk_threshold,
        start_mode="shared",
    )


def run_trial(plan: ExperimentPlan, instance: int, trial: int, planner_doc: dict,
              budget: float, comm_range) -> dict:
    planner_doc = dict(planner_doc)
    name = planner_doc.pop("name")
    risk_aware = bool(planner_doc.get("risk_aware", False))
    record = {
        "planner": name,
        "budget": float(budget),
        "comm_range": comm_range,
        "instance": instance,
        "trial": trial,
    }
    t0 = time.perf_counter()
    try:
        spec, truth, rm = build_instance(plan, instance, risk_aware)
        cfg = episode_config(plan, {"risk_aware": risk_aware}, budget, comm_range)
        pconf = PlannerConfig.from_dict(planner_doc)
        seed = derive_seed(plan.base_seed, "episode", instance, trial)
        plan_seed = derive_seed(plan.base_seed, "planner", instance, trial)
        if pconf.kind == "sga_rrt":
            engine = ContinuousEpisode(truth, cfg, starts=[rm.nodes[0]] * plan.num_agents,
                                       seed=seed, execute_segment=pconf.execute_segment)
            planner = SgaRrtPlanner(pconf, allowed=_risk_free_predicate(truth, plan.risk_threshold)
                                    if not risk_aware else None)
            run_continuous_episode(engine, planner, seed=plan_seed)
            phi_series = None
            agent_steps = engine.step_index * plan.num_agents
            deadlocks = 0
            risky_sites = 0
            risky_sites_non_deadlock = 0
        else:
            engine = Episode(truth, rm, cfg, seed=seed)
            planner = make_planner(pconf)
            run_graph_episode(engine, planner, seed=plan_seed)
            phi_series = [r["phi_eval"] for r in engine.records]
            agent_steps = engine.agent_step_count
            deadlocks = engine.deadlock_unmask_count
            risky_sites = 0
            risky_sites_non_deadlock = 0
            for r in engine.records:
                for m in r["measurements"]:
                    if m["risk_ucb_decision"] >= plan.risk_threshold:
                        risky_sites += 1
                        if not r["deadlock_unmasks"][m["agent"]]:
                            risky_sites_non_deadlock += 1
        record.update({
            "final_trace": engine.final_trace(),
            "steps": engine.step_index,
            "agent_steps": agent_steps,
            "executed_length": engine.total_executed_length(),
            "termination": engine.cause,
            "deadlock_unmasks": deadlocks,
            "risky_sites": risky_sites,
            "risky_sites_non_deadlock": risky_sites_non_deadlock,
            "phi_series": phi_series,
            "error": None,
        })
    except Exception as exc:  # record the failure, keep the batch going
        record.update({
            "final_trace": float("nan"),
            "steps": 0,
            "agent_steps": 0,
            "executed_length": float("nan"),
            "termination": "error",
            "deadlock_unmasks": 0,
            "risky_sites": 0,
            "risky_sites_non_deadlock": 0,
            "phi_series": None,
            "error": f"{type(exc).__name__}: {exc}",
        })
    record["wall_time"] = time.perf_counter() - t0
    return record


def _risk_free_predicate(truth: GroundTruth, threshold: float):
    def allowed(q):
        return float(truth.eval_risk(np.clip(q, 0.0, 1.0))) < threshold
    return allowed


def _limit_blas_threads():
    # trial matrices are tiny; forked BLAS thread pools only add overhead
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = "1"


def _trial_task(args):
    plan_doc, instance, trial, planner_doc, budget, comm_range = args
    plan = ExperimentPlan.from_json(plan_doc)
    return run_trial(plan, instance, trial, planner_doc, budget, comm_range)


def enumerate_cells(plan: ExperimentPlan):
    for planner_doc in plan.planners:
        for budget in plan.budgets:
            for comm_range in plan.comm_ranges:
                for instance in range(plan.instances):
                    for trial in range(plan.trials):
                        yield planner_doc, budget, comm_range, instance, trial


def run_plan(plan: ExperimentPlan, progress=None) -> tuple[list[dict], list[dict], int]:
    """Execute every cell; returns (records, table rows, exit code)."""
    plan.validate()
    tasks = [
        (plan.to_json(), instance, trial, dict(planner_doc), budget, comm_range)
        for planner_doc, budget, comm_range, instance, trial in enumerate_cells(plan)
    ]
    if plan.workers > 1:
        ctx = get_context("fork")
        with ctx.Pool(plan.workers, initializer=_limit_blas_threads) as pool:
            records = pool.map(_trial_task, tasks, chunksize=4)
    else:
        records = []
        for i, task in enumerate(tasks):
            records.append(_trial_task(task))
            if progress and (i + 1) % 50 == 0:
                progress(i + 1, len(tasks))
    records.sort(key=_record_key)
    table = aggregate(records)
    errors = sum(1 for r in records if r["error"])
    return records, table, (1 if errors else 0)


def _record_key(rec):
    return (rec["planner"], rec["budget"], str(rec["comm_range"]), rec["instance"], rec["trial"])


def aggregate(records: list[dict]) -> list[dict]:
    """Per-(planner, budget, range) mean and sample std of the final trace."""
    cells: dict = {}
    for rec in records:
        if rec["error"]:
            continue
        key = (rec["planner"], rec["budget"], str(rec["comm_range"]))
        cells.setdefault(key, []).append(rec["final_trace"])
    rows = []
    for key in sorted(cells):
        vals = np.asarray(cells[key])
        rows.append({
            "planner": key[0],
            "budget": key[1],
            "comm_range": key[2],
            "mean": float(vals.mean()),
            "std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0,
            "n": int(len(vals)),
            "single_sample": len(vals) == 1,
        })
    return rows


def write_outputs(plan: ExperimentPlan, records: list[dict], table: list[dict]) -> Path:
    out = Path(plan.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "records.jsonl", "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(out / "results.csv", "w") as fh:
        fh.write(table_to_csv(table))
    with open(out / "plan.json", "w") as fh:
        fh.write(plan.to_json() + "\n")
    return out


def table_to_csv(table: list[dict]) -> str:
    lines = ["planner,budget,comm_range,mean,std,n"]
    for row in table:
        lines.append(
            f"{row['planner']},{row['budget']:g},{row['comm_range']},"
            f"{row['mean']:.6f},{row['std']:.6f},{row['n']}"
        )
    return "\n".join(lines) + "\n"
