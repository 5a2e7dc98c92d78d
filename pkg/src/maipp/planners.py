"""Planner suite: greedy viewpoint chasing, intent-aware trajectory sampling,
and sequential-greedy RRT, all scored against the current GP belief.

Candidate plans are valued by the exact posterior-variance reduction their
measurement sites would buy (GP variance is observation-independent, so the
"fantasy" trace after a plan can be computed before moving). Scoring is
restricted to the current high-interest region when one exists: the planning
objective rewards uncertainty reduction where the UCB criterion flags
interest, while the reported metric stays the full-grid trace.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .episode import ContinuousEpisode, Episode, Observation, Polyline, measurement_offsets
from .gp import FantasyEvaluator, GpBelief, high_interest_set
from .intent import IntentDistribution, fit_intent
from .roadmap import Roadmap, dijkstra_from

WEIGHT_FLOOR = 1e-9
RESOLVED_VARIANCE_FRACTION = 0.5  # grid cells below this fraction of prior variance count as covered


@dataclass(frozen=True)
class PlannerConfig:
    kind: str = "ti_sampling"            # sga_rrt | greedy | ti_sampling | external
    rrt_length_range: tuple[float, float] = (0.9, 1.0)
    rrt_steer_step: float = 0.05
    ti_num_candidates: int = 8
    ti_trajectory_nodes: int = 5
    execute_segment: float = 0.2
    sga_candidates: int = 16
    intent_weight: float = 4.0           # discount strength of teammates' fused intent
    risk_weight: float = 2.5             # sampling aversion saturates at the unexplored-risk UCB level
    intent_enabled: bool = True
    risk_aware: bool = True

    def __post_init__(self):
        a, b = self.rrt_length_range
        if not (0 < a < b):
            raise ValueError(f"rrt_length_range must satisfy 0 < a < b, got {self.rrt_length_range}")
        if self.ti_num_candidates < 1 or self.ti_trajectory_nodes < 1:
            raise ValueError("ti parameters must be >= 1")

    @staticmethod
    def from_dict(doc: dict) -> "PlannerConfig":
        doc = dict(doc)
        if "rrt_length_range" in doc:
            doc["rrt_length_range"] = tuple(doc["rrt_length_range"])
        return PlannerConfig(**doc)


@dataclass
class CandidatePlan:
    waypoints: np.ndarray                 # (n, 2) positions, agent's position first
    nodes: tuple[int, ...] | None = None  # present for roadmap-based plans
    score: float = float("nan")
    planner: str = ""

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1).sum())


def scoring_subset(belief: GpBelief, mu_th: float, beta: float) -> np.ndarray | None:
    """Grid indices the planner tries to de-uncertain; None means full grid."""
    region = high_interest_set(belief, mu_th, beta)
    if len(region.indices) == 0 or len(region.indices) == belief.grid.shape[0]:
        return None
    return region.indices


def plan_sites(waypoints: np.ndarray, odometer: float, interval: float) -> np.ndarray:
    """Measurement sites an agent would trigger while walking `waypoints`."""
    line = Polyline(waypoints)
    offsets, _ = measurement_offsets(odometer, line.length, interval)
    if not offsets:
        return np.zeros((0, 2))
    return np.array([line.point_at(off) for off in offsets])


# ---------------------------------------------------------------------------
# Greedy: chase the nearest still-uncertain high-interest grid point.
# ---------------------------------------------------------------------------


class GreedyPlanner:
    """Nearest-viewpoint selection on the roadmap."""

    def __init__(self, config: PlannerConfig):
        self.config = config

    def decide(self, engine: Episode, obs: Observation, rng=None):
        agent = engine.agents[obs.agent_id]
        belief = agent.interest_belief
        rm = engine.rm
        mean, var = belief.grid_mean(), belief.grid_variance()
        region = high_interest_set(belief, obs.mu_th, engine.config.beta_interest)
        # Already-resolved cells are not worth visiting again.
        open_idx = region.indices[
            var[region.indices] >= RESOLVED_VARIANCE_FRACTION * belief.params.signal_variance
        ]
        if len(open_idx) > 0:
            d = np.linalg.norm(belief.grid[open_idx] - agent.position, axis=1)
            target_point = belief.grid[open_idx[int(np.argmin(d))]]
            target_node = int(np.argmin(np.linalg.norm(rm.nodes - target_point, axis=1)))
        else:
            node_mean, node_var = belief.predict(rm.nodes)
            best = node_var.max()
            cands = np.flatnonzero(node_var >= best - 1e-12)
            d = np.linalg.norm(rm.nodes[cands] - agent.position, axis=1)
            target_node = int(cands[int(np.argmin(d))])
            target_point = rm.nodes[target_node]

        dist_from_target, _ = dijkstra_from(rm, target_node)
        nbrs = obs.neighbors
        best_j, best_cost = None, np.inf
        for j, v in enumerate(nbrs):
            if not obs.mask[j]:
                continue
            cost = rm.edge_length(obs.current_node, v) + dist_from_target[v]
            if cost < best_cost - 1e-12:
                best_cost, best_j = cost, j
        if best_j is None:
            return None, None
        return nbrs[best_j], None


# ---------------------------------------------------------------------------
# TI: stochastic trajectory sampling with intent discounting + fantasy scoring.
# ---------------------------------------------------------------------------


class TiPlanner:
    """Samples short node trajectories, scores them by predicted variance
    reduction per unit length, and broadcasts a Gaussian intent fitted over
    the whole candidate cloud."""

    def __init__(self, config: PlannerConfig):
        self.config = config

    def _expansion_weights(self, engine, nodes, interest_ucb, intent_field, risk_nodes):
        w = np.maximum(interest_ucb[nodes], WEIGHT_FLOOR)
        if self.config.intent_enabled and self.config.intent_weight > 0:
            # hard zero: any leaked hop into a teammate's claimed region would
            # win the (intent-blind) trace scoring and undo the coordination
            w = w * np.maximum(1.0 - self.config.intent_weight * intent_field[nodes], 0.0)
        if self.config.risk_aware and engine.config.risk_enabled and self.config.risk_weight > 0:
            w = w * np.maximum(1.0 - self.config.risk_weight * risk_nodes[nodes], 0.0)
        return np.maximum(w, 0.0)

    def decide(self, engine: Episode, obs: Observation, rng: np.random.Generator):
        cfg = self.config
        agent = engine.agents[obs.agent_id]
        rm = engine.rm
        belief = agent.interest_belief
        node_mean, node_var = belief.predict(rm.nodes)
        interest_ucb = node_mean + engine.config.beta_interest * node_var
        intent_field = obs.intent_field if cfg.intent_enabled else np.zeros(rm.num_nodes)

        first_hops = [v for j, v in enumerate(obs.neighbors) if obs.mask[j]]
        if not first_hops:
            return None, None

        candidates: list[CandidatePlan] = []
        for _ in range(cfg.ti_num_candidates):
            seq = []
            prev = obs.current_node
            for depth in range(cfg.ti_trajectory_nodes):
                options = first_hops if depth == 0 else list(rm.neighbors[seq[-1]])
                if depth > 0 and len(options) > 1:
                    back = seq[-2] if len(seq) >= 2 else prev
                    options = [v for v in options if v != back] or options
                w = self._expansion_weights(engine, np.array(options), interest_ucb,
                                            intent_field, obs.risk_ucb)
                if w.sum() <= 0:
                    w = np.ones(len(options))
                pick = int(rng.choice(len(options), p=w / w.sum()))
                seq.append(options[pick])
            waypoints = np.vstack([agent.position[None, :], rm.nodes[seq]])
            candidates.append(CandidatePlan(waypoints=waypoints, nodes=tuple(seq), planner="ti"))

        subset = scoring_subset(belief, obs.mu_th, engine.config.beta_interest)
        points = belief.grid if subset is None else belief.grid[subset]
        evaluator = FantasyEvaluator(belief, points)
        base = float(evaluator.base_variance.sum())
        for cand in candidates:
            sites = plan_sites(cand.waypoints, agent.odometer, engine.config.measurement_interval)
            reduced = base - float(evaluator.variance_with(sites).sum())
            cand.score = reduced / max(cand.length, 1e-9)

        best = max(candidates, key=lambda c: c.score)
        # Broadcast the predicted-trajectory cloud: the sampled candidates
        # consistent with the committed first edge. Fitting over the whole
        # candidate set instead would smear the Gaussian over every direction
        # explored and carry no commitment signal to teammates.
        committed = [c for c in candidates if c.nodes[0] == best.nodes[0]]
        intent = fit_intent([rm.nodes[list(c.nodes)] for c in committed],
                            agent_id=obs.agent_id, step=obs.step)
        self.last_candidates = candidates
        return best.nodes[0], intent


# ---------------------------------------------------------------------------
# SGA + RRT: sequential greedy assignment over continuous RRT candidates.
# ---------------------------------------------------------------------------


def _grow_rrt_path(start, length_range, rng, steer_step, allowed, max_iter):
    """One independent tree; returns the first root-to-node path whose length
    lands in [a, b], or None if the growth budget runs out."""
    a, b = length_range
    nodes = np.empty((max_iter + 1, 2))
    nodes[0] = start
    n = 1
    parents = [-1]
    root_len = [0.0]
    for _ in range(max_iter):
        q = rng.uniform(0.0, 1.0, size=2)
        if allowed is not None and not allowed(q):
            continue
        diffs = nodes[:n] - q
        near = int(np.argmin(np.einsum("ij,ij->i", diffs, diffs)))
        d = q - nodes[near]
        dist = float(np.linalg.norm(d))
        if dist < 1e-12:
            continue
        new = np.clip(nodes[near] + d * min(steer_step, dist) / dist, 0.0, 1.0)
        if allowed is not None and not allowed(new):
            continue
        new_len = root_len[near] + float(np.linalg.norm(new - nodes[near]))
        if new_len > b:
            continue
        nodes[n] = new
        parents.append(near)
        root_len.append(new_len)
        n += 1
        if new_len >= a:
            path = [n - 1]
            while parents[path[-1]] >= 0:
                path.append(parents[path[-1]])
            path.reverse()
            return nodes[path].copy()
    return None


def sample_rrt_candidates(start, length_range, rng: np.random.Generator, count: int,
                          steer_step: float = 0.05, allowed=None,
                          max_iter: int = 800) -> list[CandidatePlan]:
    """Sample `count` workspace paths of length within [a, b] via RRT.

    Each candidate comes from its own small exploring tree (stopped at its
    first in-range leaf), so the set does not collapse onto shared trunks of
    one big tree and the measurement sites genuinely differ across
    candidates. Falls back to straight rays when growth keeps failing
    (heavily restricted workspace)."""
    start = np.asarray(start, dtype=float)
    a, b = length_range
    plans: list[CandidatePlan] = []
    for _ in range(count):
        path = _grow_rrt_path(start, length_range, rng, steer_step, allowed, max_iter)
        if path is None:
            theta = rng.uniform(0.0, 2.0 * np.pi)
            end = np.clip(start + 0.5 * (a + b) * np.array([np.cos(theta), np.sin(theta)]),
                          0.0, 1.0)
            plans.append(CandidatePlan(waypoints=np.array([start, end]), planner="rrt-fallback"))
        else:
            plans.append(CandidatePlan(waypoints=path, planner="rrt"))
    return plans


class SgaRrtPlanner:
    """Agents plan in id order; each conditions its fantasy scoring on the
    measurement sites of higher-priority teammates within communication
    range, then picks the candidate minimizing the predicted trace."""

    def __init__(self, config: PlannerConfig, allowed=None):
        self.config = config
        self.allowed = allowed
        self.current_plans: list[CandidatePlan | None] = []

    def decide_round(self, engine: ContinuousEpisode, rng: np.random.Generator):
        cfg = self.config
        econf = engine.config
        positions = np.array([a.position for a in engine.agents])
        from .episode import communication_partition

        groups = communication_partition(positions, econf.comm_range)
        committed_sites: dict[int, np.ndarray] = {}
        paths: list[np.ndarray | None] = []
        for i, agent in enumerate(engine.agents):
            candidates = sample_rrt_candidates(
                agent.position, cfg.rrt_length_range, rng, cfg.sga_candidates,
                steer_step=cfg.rrt_steer_step, allowed=self.allowed,
            )
            group = next(g for g in groups if i in g)
            cond = [committed_sites[j] for j in sorted(group) if j in committed_sites and j != i]
            cond_sites = np.vstack(cond) if cond else np.zeros((0, 2))
            belief = agent.interest_belief
            subset = scoring_subset(belief, econf.mu_th, econf.beta_interest)
            points = belief.grid if subset is None else belief.grid[subset]
            evaluator = FantasyEvaluator(belief, points)
            best, best_trace = None, np.inf
            for cand in candidates:
                sites = plan_sites(cand.waypoints, agent.odometer, econf.measurement_interval)
                all_sites = np.vstack([cond_sites, sites]) if len(cond_sites) else sites
                trace = float(evaluator.variance_with(all_sites).sum())
                cand.score = trace
                if trace < best_trace - 1e-15:
                    best_trace, best = trace, cand
            if best is None:
                paths.append(None)
                continue
            committed_sites[i] = plan_sites(best.waypoints, agent.odometer,
                                            econf.measurement_interval)
            paths.append(best.waypoints)
        self.current_plans = paths
        return paths


# ---------------------------------------------------------------------------
# Episode drivers.
# ---------------------------------------------------------------------------


def make_planner(config: PlannerConfig, allowed=None):
    if config.kind == "greedy":
        return GreedyPlanner(config)
    if config.kind == "ti_sampling":
        return TiPlanner(config)
    if config.kind == "sga_rrt":
        return SgaRrtPlanner(config, allowed=allowed)
    raise ValueError(f"unknown planner kind {config.kind!r}")


def run_graph_episode(engine: Episode, planner, seed: int, max_rounds: int = 10_000) -> Episode:
    """Drive a roadmap episode to termination with a per-agent planner.

    Agents are planned in id order; a TI agent broadcasts its fitted intent
    immediately, so later agents in the same round already see it (subject
    to communication range at observation time).
    """
    rng_master = np.random.SeedSequence(seed)
    agent_rngs = [np.random.default_rng(s) for s in rng_master.spawn(engine.config.num_agents)]
    engine.reset()
    for _ in range(max_rounds):
        if engine.done:
            break
        actions: list[int | None] = []
        for i in range(engine.config.num_agents):
            obs = engine.observe(i)
            if not obs.mask.any():
                actions.append(None)
                continue
            action, intent = planner.decide(engine, obs, agent_rngs[i])
            if intent is not None:
                engine.set_intent(i, intent)
            actions.append(action)
        if all(a is None for a in actions):
            break
        engine.step(actions)
    return engine


def run_continuous_episode(engine: ContinuousEpisode, planner: SgaRrtPlanner, seed: int,
                           max_rounds: int = 10_000) -> ContinuousEpisode:
    """Drive an off-graph (RRT) episode: replan every executed segment."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    for _ in range(max_rounds):
        if engine.done:
            break
        paths = planner.decide_round(engine, rng)
        engine.step(paths)
    return engine
