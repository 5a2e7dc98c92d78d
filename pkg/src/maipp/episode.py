"""Shared-budget multi-agent episode engine.

Agents sit on roadmap nodes and commit one outgoing edge per decision round.
Motion is simulated continuously: every agent measures both fields each time
it accumulates `measurement_interval` (default 0.2) of travel, and each
measurement propagates to whichever agents share the measuring agent's
communication component at that instant. Beliefs are therefore partitioned
by communication range; a separate evaluation belief ingests everything for
metric reporting.

Rounds are resolved synchronously. Within a round agents commit edges in id
order against the shared budget pool; an agent whose edge no longer fits
(because earlier teammates spent the remainder) simply stays put for the
round. The episode ends when no agent has any budget-feasible edge left, or
immediately on overflow when budget masking is disabled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields as dataclass_fields

import numpy as np

from . import fields as fd
from .gp import GpBelief, KernelParams, risk_ucb_at
from .intent import IntentDistribution, fuse_intents
from .roadmap import Roadmap, feasibility_mask

BUDGET_TOL = 1e-9


class MaskedActionError(RuntimeError):
    """A planner handed the engine an action its own mask had filtered."""


def config_to_dict(config: "EpisodeConfig") -> dict:
    doc = {f.name: getattr(config, f.name) for f in dataclass_fields(config)}
    for key in ("interest_kernel", "risk_kernel"):
        k = doc[key]
        doc[key] = {"lengthscale": k.lengthscale, "signal_variance": k.signal_variance,
                    "noise_variance": k.noise_variance, "jitter": k.jitter}
    return doc


def config_from_dict(doc: dict) -> "EpisodeConfig":
    doc = dict(doc)
    for key in ("interest_kernel", "risk_kernel"):
        if key in doc and isinstance(doc[key], dict):
            doc[key] = KernelParams(**doc[key])
    return EpisodeConfig(**doc)


@dataclass(frozen=True)
class EpisodeConfig:
    num_agents: int = 3
    team_budget: float = 3.0
    measurement_interval: float = 0.2
    comm_range: float | str = "global"
    risk_enabled: bool = True
    risk_threshold: float = 0.7
    hard_risk: bool = True
    mu_th: float = 0.4
    beta_interest: float = 1.0
    beta_risk: float = 1.0
    penalty_backtrack: float = 0.1
    penalty_collision: float = 0.2
    penalty_overflow: float = 1.0
    penalty_risk: float = 0.5
    lambda_term: float = 1.0 / 900.0
    backtrack_window: int = 3
    grid_resolution: int = 30
    interest_kernel: KernelParams = KernelParams(lengthscale=0.2, signal_variance=1.0, noise_variance=1e-4)
    # Risk prior std 0.4 keeps the prior UCB (0 + beta * 0.4) well under the
    # 0.7 threshold, so unexplored terrain stays traversable until evidence
    # says otherwise, while confidently risky readings still clear it.
    risk_kernel: KernelParams = KernelParams(lengthscale=0.2, signal_variance=0.16, noise_variance=1e-4)
    start_mode: str = "shared"      # "shared" -> all agents at node 0; "uniform" -> random nodes
    mask_budget: bool = True        # False exposes budget-overflow actions (training-style)
    trajectory_tail: int = 8

    def __post_init__(self):
        if self.team_budget <= 0 or self.measurement_interval <= 0:
            raise ValueError("team_budget and measurement_interval must be positive")
        for p in (self.penalty_backtrack, self.penalty_collision, self.penalty_overflow, self.penalty_risk):
            if p < 0:
                raise ValueError("penalties must be >= 0")
        if self.start_mode not in ("shared", "uniform"):
            raise ValueError(f"unknown start_mode {self.start_mode!r}")

    @property
    def global_comm(self) -> bool:
        return self.comm_range == "global"


@dataclass(frozen=True)
class StepEvents:
    backtrack: bool = False
    collision: bool = False
    overflow: bool = False
    risk_violations: int = 0
    halted: bool = False


def reward_for_step(phi_prev: float, phi_now: float, events: StepEvents,
                    terminal: bool, config: EpisodeConfig | None = None) -> float:
    """Info-gain ratio minus event penalties minus the terminal correction.

    r = max(0, (phi_prev - phi_now) / phi_prev)
        - [0.1*backtrack + 0.2*collision + 1.0*overflow + 0.5*risk_violations]
        - lambda_term * phi_now * 1{terminal}
    """
    cfg = config or EpisodeConfig()
    if phi_prev <= 0:
        raise ValueError("phi_prev must be positive")
    r = max(0.0, (phi_prev - phi_now) / phi_prev)
    r -= cfg.penalty_backtrack * bool(events.backtrack)
    r -= cfg.penalty_collision * bool(events.collision)
    r -= cfg.penalty_overflow * bool(events.overflow)
    if cfg.risk_enabled:
        r -= cfg.penalty_risk * events.risk_violations
    if terminal:
        r -= cfg.lambda_term * phi_now
    return r


def communication_partition(positions: np.ndarray, comm_range: float | str) -> list[set[int]]:
    """Connected components of the proximity graph (distance <= comm_range)."""
    n = len(positions)
    if comm_range == "global":
        return [set(range(n))]
    positions = np.asarray(positions, dtype=float)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if np.linalg.norm(positions[i] - positions[j]) <= comm_range:
                parent[find(i)] = find(j)
    groups: dict[int, set[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), set()).add(i)
    return sorted(groups.values(), key=min)


def measurement_offsets(odometer: float, length: float, interval: float) -> tuple[list[float], float]:
    """Travel offsets (within this move) where the measurement trigger fires."""
    total = odometer + length
    fired = int(math.floor(total / interval + 1e-9))
    offsets = [k * interval - odometer for k in range(1, fired + 1)]
    return offsets, total - fired * interval


class Polyline:
    """Arc-length parameterized piecewise-linear path."""

    def __init__(self, points):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        seg = np.diff(self.points, axis=0)
        self.seg_len = np.linalg.norm(seg, axis=1) if len(self.points) > 1 else np.zeros(0)
        self.cum = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.length = float(self.cum[-1])

    def point_at(self, s: float) -> np.ndarray:
        s = min(max(s, 0.0), self.length)
        if self.length == 0.0 or len(self.points) == 1:
            return self.points[0]
        i = int(np.searchsorted(self.cum, s, side="right") - 1)
        i = min(i, len(self.seg_len) - 1)
        if self.seg_len[i] == 0:
            return self.points[i]
        t = (s - self.cum[i]) / self.seg_len[i]
        return self.points[i] + t * (self.points[i + 1] - self.points[i])

    def prefix(self, s: float) -> "Polyline":
        """Sub-path covering the first s units of arc length."""
        s = min(max(s, 0.0), self.length)
        keep = [self.points[0]]
        for i in range(len(self.seg_len)):
            if self.cum[i + 1] <= s + 1e-15:
                keep.append(self.points[i + 1])
            else:
                keep.append(self.point_at(s))
                break
        return Polyline(keep)


@dataclass
class AgentState:
    agent_id: int
    current_node: int
    position: np.ndarray
    trajectory: list[int]
    polyline_points: list[np.ndarray]
    executed_length: float
    odometer: float
    recent: list[int]
    interest_belief: GpBelief
    risk_belief: GpBelief
    latest_intent: IntentDistribution | None
    rng: np.random.Generator


@dataclass(frozen=True)
class Observation:
    agent_id: int
    step: int
    current_node: int
    neighbors: tuple[int, ...]
    mask: np.ndarray
    deadlock_unmask: bool
    interest_mean: np.ndarray     # per node
    interest_std: np.ndarray      # per node
    intent_field: np.ndarray      # per node, fused from in-range teammates
    risk_ucb: np.ndarray          # per node
    budget_fraction: float
    trajectory_tail: tuple[int, ...]
    mu_th: float


@dataclass
class MeasurementRecord:
    agent_id: int
    offset: float                 # travel offset within the round
    site: tuple[float, float]
    value_interest: float
    value_risk: float
    risk_ucb_decision: float      # under the acting agent's round-start risk belief


class Episode:
    """Roadmap-based episode: one engine instance per trial."""

    def __init__(self, truth: fd.GroundTruth, rm: Roadmap, config: EpisodeConfig, seed: int = 0):
        self.truth = truth
        self.rm = rm
        self.config = config
        self.seed = seed
        self.agents: list[AgentState] = []
        self.remaining_budget = config.team_budget
        self.step_index = 0
        self.done = False
        self.cause: str | None = None
        self.records: list[dict] = []
        self.eval_belief = GpBelief(config.interest_kernel, grid_resolution=config.grid_resolution)
        self.deadlock_unmask_count = 0
        self.agent_step_count = 0
        self._mask_cache: dict = {}

    # -- setup ---------------------------------------------------------------

    def reset(self) -> list[Observation]:
        cfg = self.config
        ss = np.random.SeedSequence(self.seed)
        streams = ss.spawn(cfg.num_agents + 1)
        start_rng = np.random.default_rng(streams[-1])
        self.agents = []
        for i in range(cfg.num_agents):
            if cfg.start_mode == "shared":
                node = 0
            else:
                node = int(start_rng.integers(0, self.rm.num_nodes))
            self.agents.append(AgentState(
                agent_id=i,
                current_node=node,
                position=self.rm.nodes[node].copy(),
                trajectory=[node],
                polyline_points=[self.rm.nodes[node].copy()],
                executed_length=0.0,
                odometer=0.0,
                recent=[],
                interest_belief=GpBelief(cfg.interest_kernel, grid_resolution=cfg.grid_resolution),
                risk_belief=GpBelief(cfg.risk_kernel, grid_resolution=cfg.grid_resolution),
                latest_intent=None,
                rng=np.random.default_rng(streams[i]),
            ))
        self.remaining_budget = cfg.team_budget
        self.step_index = 0
        self.done = False
        self.cause = None
        self.records = []
        self.eval_belief = GpBelief(cfg.interest_kernel, grid_resolution=cfg.grid_resolution)
        self.deadlock_unmask_count = 0
        self.agent_step_count = 0
        self._mask_cache = {}
        return [self.observe(i) for i in range(cfg.num_agents)]

    # -- observations ---------------------------------------------------------

    def comm_groups(self) -> list[set[int]]:
        positions = np.array([a.position for a in self.agents])
        return communication_partition(positions, self.config.comm_range)

    def group_of(self, agent_id: int) -> set[int]:
        for group in self.comm_groups():
            if agent_id in group:
                return group
        return {agent_id}

    def _edge_sites(self, agent: AgentState, neighbor: int) -> np.ndarray:
        """Measurement sites the agent would trigger along edge -> neighbor."""
        a = self.rm.nodes[agent.current_node]
        b = self.rm.nodes[neighbor]
        length = float(np.linalg.norm(b - a))
        offsets, _ = measurement_offsets(agent.odometer, length, self.config.measurement_interval)
        if not offsets:
            return np.zeros((0, 2))
        return np.array([a + (off / length) * (b - a) for off in offsets])

    def _mask_for(self, agent_id: int):
        key = (self.step_index, agent_id)
        if key in self._mask_cache:
            return self._mask_cache[key]
        cfg = self.config
        agent = self.agents[agent_id]
        nbrs = self.rm.neighbors[agent.current_node]
        risk_nodes = None
        if cfg.risk_enabled:
            risk_nodes = risk_ucb_at(agent.risk_belief, self.rm.nodes, cfg.beta_risk)
        budget = self.remaining_budget if cfg.mask_budget else float("inf")
        base = feasibility_mask(
            self.rm, agent.current_node, budget,
            occupied=frozenset(),
            risk_ucb_nodes=risk_nodes,
            risk_threshold=cfg.risk_threshold,
            hard_risk=cfg.hard_risk and cfg.risk_enabled,
        )
        mask = base.feasible.copy()
        deadlock = base.deadlock_unmask
        if cfg.hard_risk and cfg.risk_enabled and not deadlock:
            # A safe destination node can still route the agent through a risky
            # measurement site; refine the mask with the en-route sites.
            for j, v in enumerate(nbrs):
                if not mask[j]:
                    continue
                sites = self._edge_sites(agent, v)
                if len(sites) == 0:
                    continue
                ucb = risk_ucb_at(agent.risk_belief, sites, cfg.beta_risk)
                if np.any(ucb >= cfg.risk_threshold):
                    mask[j] = False
            if not mask.any():
                in_budget = np.array([
                    self.rm.edge_length(agent.current_node, v) <= budget + BUDGET_TOL for v in nbrs
                ])
                if in_budget.any():
                    node_risk = np.array([risk_nodes[v] for v in nbrs])
                    node_risk = np.where(in_budget, node_risk, np.inf)
                    mask[int(np.argmin(node_risk))] = True
                    deadlock = True
        if deadlock:
            self.deadlock_unmask_count += 1
        result = (mask, deadlock)
        self._mask_cache[key] = result
        return result

    def observe(self, agent_id: int) -> Observation:
        cfg = self.config
        agent = self.agents[agent_id]
        mu, var = agent.interest_belief.predict(self.rm.nodes)
        if cfg.risk_enabled:
            risk_nodes = risk_ucb_at(agent.risk_belief, self.rm.nodes, cfg.beta_risk)
        else:
            risk_nodes = np.zeros(self.rm.num_nodes)
        group = self.group_of(agent_id)
        intents = [self.agents[j].latest_intent for j in sorted(group)
                   if j != agent_id and self.agents[j].latest_intent is not None]
        intent_field = fuse_intents(intents, self.rm.nodes)
        mask, deadlock = self._mask_for(agent_id)
        tail = tuple(agent.trajectory[-cfg.trajectory_tail:])
        return Observation(
            agent_id=agent_id,
            step=self.step_index,
            current_node=agent.current_node,
            neighbors=self.rm.neighbors[agent.current_node],
            mask=mask.copy(),
            deadlock_unmask=deadlock,
            interest_mean=mu,
            interest_std=np.sqrt(var),
            intent_field=intent_field,
            risk_ucb=risk_nodes,
            budget_fraction=self.remaining_budget / cfg.team_budget,
            trajectory_tail=tail,
            mu_th=cfg.mu_th,
        )

    def set_intent(self, agent_id: int, intent: IntentDistribution | None):
        self.agents[agent_id].latest_intent = intent

    # -- stepping ---------------------------------------------------------------

    def step(self, actions: list[int]) -> tuple[list[Observation], list[float], bool]:
        cfg = self.config
        if self.done:
            raise RuntimeError("episode already terminated")
        if len(actions) != cfg.num_agents:
            raise ValueError("one action per agent required")

        # Validate against the masks the planners saw this round. An explicit
        # None means "stay", legal only when the agent's mask is fully closed.
        moves: list[tuple[int, float] | None] = [None] * cfg.num_agents
        overflow = [False] * cfg.num_agents
        for i, target in enumerate(actions):
            agent = self.agents[i]
            mask, _ = self._mask_for(i)
            if target is None:
                if mask.any():
                    raise MaskedActionError(
                        f"agent {i}: stay requested while feasible actions exist")
                continue
            nbrs = self.rm.neighbors[agent.current_node]
            if target not in nbrs:
                raise MaskedActionError(
                    f"agent {i}: node {target} is not a neighbor of {agent.current_node}")
            j = nbrs.index(target)
            if not mask[j]:
                raise MaskedActionError(f"agent {i}: action {target} was masked at decision time")
            length = self.rm.edge_length(agent.current_node, target)
            if not cfg.mask_budget and length > self.remaining_budget + BUDGET_TOL:
                overflow[i] = True
            moves[i] = (target, length)

        chosen = [m[0] for m in moves if m is not None]
        collisions = [m is not None and chosen.count(m[0]) > 1 for m in moves]

        if any(overflow):
            # Overflow terminates immediately; no motion is executed.
            phi = [a.interest_belief.covariance_trace() for a in self.agents]
            rewards = []
            for i in range(cfg.num_agents):
                ev = StepEvents(collision=collisions[i], overflow=overflow[i])
                rewards.append(reward_for_step(phi[i], phi[i], ev, terminal=True, config=cfg))
            self.done = True
            self.cause = "overflow"
            self._record_round(actions, [False] * cfg.num_agents, [], rewards,
                               [StepEvents(collision=collisions[i], overflow=overflow[i])
                                for i in range(cfg.num_agents)])
            self.step_index += 1
            return [self.observe(i) for i in range(cfg.num_agents)], rewards, True

        # Sequential budget commitment in id order.
        provisional = self.remaining_budget
        committed = [False] * cfg.num_agents
        for i in range(cfg.num_agents):
            if moves[i] is None:
                continue
            _, length = moves[i]
            if length <= provisional + BUDGET_TOL:
                committed[i] = True
                provisional -= length
        self.agent_step_count += sum(committed)

        phi_prev = [a.interest_belief.covariance_trace() for a in self.agents]
        decision_risk = [a.risk_belief for a in self.agents]

        # Continuous motion with measurement events, ordered by (time, agent).
        events: list[tuple[float, int, np.ndarray]] = []
        lines: list[Polyline | None] = [None] * cfg.num_agents
        for i in range(cfg.num_agents):
            if not committed[i]:
                continue
            agent = self.agents[i]
            target, length = moves[i]
            line = Polyline([self.rm.nodes[agent.current_node], self.rm.nodes[target]])
            lines[i] = line
            offsets, _ = measurement_offsets(agent.odometer, length, cfg.measurement_interval)
            for off in offsets:
                events.append((off, i, line.point_at(off)))
        events.sort(key=lambda e: (e[0], e[1]))

        pending_interest: list[list] = [[] for _ in range(cfg.num_agents)]
        pending_risk: list[list] = [[] for _ in range(cfg.num_agents)]
        eval_pending: list = []
        measure_log: list[MeasurementRecord] = []
        risk_hits = [0] * cfg.num_agents

        for tau, i, site in events:
            y = fd.sample_measurement(self.truth, site, fd.FIELD_INTEREST_MIXED, self.agents[i].rng)
            r = fd.sample_measurement(self.truth, site, fd.FIELD_RISK, self.agents[i].rng)
            positions = [
                lines[j].point_at(min(tau, lines[j].length)) if lines[j] is not None
                else self.agents[j].position
                for j in range(cfg.num_agents)
            ]
            groups = communication_partition(np.array(positions), cfg.comm_range)
            receivers = next(g for g in groups if i in g)
            for j in sorted(receivers):
                pending_interest[j].append((site, y))
                pending_risk[j].append((site, r))
            eval_pending.append((site, y))
            ucb_dec = float(risk_ucb_at(decision_risk[i], site[None, :], cfg.beta_risk)[0])
            if cfg.risk_enabled and ucb_dec >= cfg.risk_threshold:
                risk_hits[i] += 1
            measure_log.append(MeasurementRecord(
                agent_id=i, offset=float(tau), site=(float(site[0]), float(site[1])),
                value_interest=y, value_risk=r, risk_ucb_decision=ucb_dec,
            ))

        # Apply motion/bookkeeping.
        step_events: list[StepEvents] = []
        for i in range(cfg.num_agents):
            agent = self.agents[i]
            target, length = moves[i] if moves[i] is not None else (None, 0.0)
            backtrack = False
            if committed[i]:
                backtrack = target in agent.recent
                prev = agent.current_node
                offsets, new_odo = measurement_offsets(agent.odometer, length, cfg.measurement_interval)
                agent.odometer = new_odo
                agent.current_node = target
                agent.position = self.rm.nodes[target].copy()
                agent.trajectory.append(target)
                agent.polyline_points.append(self.rm.nodes[target].copy())
                agent.executed_length += length
                if prev in agent.recent:
                    agent.recent.remove(prev)
                agent.recent.append(prev)
                if len(agent.recent) > cfg.backtrack_window:
                    agent.recent.pop(0)
            if pending_interest[i]:
                agent.interest_belief = agent.interest_belief.add_measurements(pending_interest[i])
                agent.risk_belief = agent.risk_belief.add_measurements(pending_risk[i])
            step_events.append(StepEvents(
                backtrack=backtrack,
                collision=collisions[i],
                overflow=False,
                risk_violations=risk_hits[i],
                halted=not committed[i],
            ))

        spent = sum(moves[i][1] for i in range(cfg.num_agents) if committed[i] and moves[i] is not None)
        self.remaining_budget -= spent
        if eval_pending:
            self.eval_belief = self.eval_belief.add_measurements(eval_pending)

        terminal = not self._any_feasible_budget_move()
        if terminal:
            self.done = True
            self.cause = "budget_exhausted"

        rewards = []
        for i in range(cfg.num_agents):
            phi_now = self.agents[i].interest_belief.covariance_trace()
            rewards.append(reward_for_step(phi_prev[i], phi_now, step_events[i],
                                           terminal=terminal, config=cfg))

        self._record_round(actions, committed, measure_log, rewards, step_events)
        self.step_index += 1
        observations = [self.observe(i) for i in range(cfg.num_agents)]
        return observations, rewards, self.done

    def _any_feasible_budget_move(self) -> bool:
        for agent in self.agents:
            for v in self.rm.neighbors[agent.current_node]:
                if self.rm.edge_length(agent.current_node, v) <= self.remaining_budget + BUDGET_TOL:
                    return True
        return False

    # -- logging ---------------------------------------------------------------

    def _record_round(self, actions, committed, measure_log, rewards, step_events):
        groups = [sorted(g) for g in self.comm_groups()]
        deadlocks = [self._mask_cache.get((self.step_index, i), (None, False))[1]
                     for i in range(self.config.num_agents)]
        self.records.append({
            "step": self.step_index,
            "actions": [int(a) if a is not None else None for a in actions],
            "committed": [bool(c) for c in committed],
            "positions": [[float(a.position[0]), float(a.position[1])] for a in self.agents],
            "nodes": [int(a.current_node) for a in self.agents],
            "remaining_budget": float(self.remaining_budget),
            "rewards": [float(r) for r in rewards],
            "events": [
                {
                    "backtrack": e.backtrack, "collision": e.collision,
                    "overflow": e.overflow, "risk_violations": e.risk_violations,
                    "halted": e.halted,
                }
                for e in step_events
            ],
            "deadlock_unmasks": deadlocks,
            "phi_eval": self.eval_belief.covariance_trace(),
            "phi_agents": [a.interest_belief.covariance_trace() for a in self.agents],
            "groups": groups,
            "measurements": [
                {
                    "agent": m.agent_id, "offset": m.offset, "site": list(m.site),
                    "interest": m.value_interest, "risk": m.value_risk,
                    "risk_ucb_decision": m.risk_ucb_decision,
                }
                for m in measure_log
            ],
            "done": self.done,
            "cause": self.cause,
        })

    # -- invariant helpers -------------------------------------------------------

    def total_executed_length(self) -> float:
        return sum(a.executed_length for a in self.agents)

    def final_trace(self) -> float:
        return self.eval_belief.covariance_trace()


class ContinuousEpisode:
    """Budget/measurement machinery for planners that move off-graph (RRT).

    Each round every agent advances up to `execute_segment` along a waypoint
    polyline supplied by its planner; the final move may be truncated exactly
    at budget exhaustion. Measurement and communication semantics match the
    roadmap engine.
    """

    def __init__(self, truth: fd.GroundTruth, config: EpisodeConfig, starts, seed: int = 0,
                 execute_segment: float = 0.2):
        self.truth = truth
        self.config = config
        self.execute_segment = execute_segment
        ss = np.random.SeedSequence(seed)
        streams = ss.spawn(config.num_agents)
        self.agents = [AgentState(
            agent_id=i,
            current_node=-1,
            position=np.asarray(starts[i], dtype=float).copy(),
            trajectory=[],
            polyline_points=[np.asarray(starts[i], dtype=float).copy()],
            executed_length=0.0,
            odometer=0.0,
            recent=[],
            interest_belief=GpBelief(config.interest_kernel, grid_resolution=config.grid_resolution),
            risk_belief=GpBelief(config.risk_kernel, grid_resolution=config.grid_resolution),
            latest_intent=None,
            rng=np.random.default_rng(streams[i]),
        ) for i in range(config.num_agents)]
        self.remaining_budget = config.team_budget
        self.eval_belief = GpBelief(config.interest_kernel, grid_resolution=config.grid_resolution)
        self.done = False
        self.cause: str | None = None
        self.step_index = 0

    def step(self, paths: list) -> bool:
        """Advance every agent along its polyline; returns done."""
        cfg = self.config
        if self.done:
            raise RuntimeError("episode already terminated")
        provisional = self.remaining_budget
        moves: list[Polyline | None] = [None] * cfg.num_agents
        for i in range(cfg.num_agents):
            if paths[i] is None:
                continue
            line = Polyline(paths[i])
            budgeted = min(self.execute_segment, line.length, provisional)
            if budgeted <= BUDGET_TOL:
                continue
            moves[i] = line.prefix(budgeted)
            provisional -= moves[i].length

        events: list[tuple[float, int, np.ndarray]] = []
        for i, line in enumerate(moves):
            if line is None:
                continue
            offsets, _ = measurement_offsets(self.agents[i].odometer, line.length,
                                             cfg.measurement_interval)
            for off in offsets:
                events.append((off, i, line.point_at(off)))
        events.sort(key=lambda e: (e[0], e[1]))

        pending_interest: list[list] = [[] for _ in range(cfg.num_agents)]
        pending_risk: list[list] = [[] for _ in range(cfg.num_agents)]
        eval_pending: list = []
        for tau, i, site in events:
            y = fd.sample_measurement(self.truth, site, fd.FIELD_INTEREST_MIXED, self.agents[i].rng)
            r = fd.sample_measurement(self.truth, site, fd.FIELD_RISK, self.agents[i].rng)
            positions = [
                moves[j].point_at(min(tau, moves[j].length)) if moves[j] is not None
                else self.agents[j].position
                for j in range(cfg.num_agents)
            ]
            groups = communication_partition(np.array(positions), cfg.comm_range)
            receivers = next(g for g in groups if i in g)
            for j in sorted(receivers):
                pending_interest[j].append((site, y))
                pending_risk[j].append((site, r))
            eval_pending.append((site, y))

        moved = False
        for i in range(cfg.num_agents):
            agent = self.agents[i]
            line = moves[i]
            if line is not None and line.length > BUDGET_TOL:
                moved = True
                offsets, new_odo = measurement_offsets(agent.odometer, line.length,
                                                       cfg.measurement_interval)
                agent.odometer = new_odo
                agent.position = line.point_at(line.length).copy()
                agent.polyline_points.extend(p.copy() for p in line.points[1:])
                agent.executed_length += line.length
                self.remaining_budget -= line.length
            if pending_interest[i]:
                agent.interest_belief = agent.interest_belief.add_measurements(pending_interest[i])
                agent.risk_belief = agent.risk_belief.add_measurements(pending_risk[i])
        if eval_pending:
            self.eval_belief = self.eval_belief.add_measurements(eval_pending)

        self.step_index += 1
        if self.remaining_budget <= BUDGET_TOL or not moved:
            self.done = True
            self.cause = "budget_exhausted"
        return self.done

    def total_executed_length(self) -> float:
        return sum(a.executed_length for a in self.agents)

    def final_trace(self) -> float:
        return self.eval_belief.covariance_trace()
