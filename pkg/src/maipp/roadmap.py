"""Probabilistic roadmap over the unit square.

Nodes are uniform samples connected to their k nearest neighbors (union
symmetrization, so the graph is undirected and every node keeps at least k
neighbors). Components left over by the k-NN rule are stitched to the main
component through their closest node pair, so the final graph is always
connected. Planning uses plain Dijkstra over Euclidean edge weights.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial.distance import cdist


@dataclass(frozen=True)
class Roadmap:
    """Immutable PRM graph: node positions plus sorted adjacency lists."""

    nodes: np.ndarray                     # (n, 2) positions
    neighbors: tuple[tuple[int, ...], ...]  # adjacency, each sorted by node id
    seed: int | None = None

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    def edge_length(self, a: int, b: int) -> float:
        return float(np.linalg.norm(self.nodes[a] - self.nodes[b]))

    def edges(self):
        """Undirected edge set as (u, v) pairs with u < v."""
        for u, nbrs in enumerate(self.neighbors):
            for v in nbrs:
                if u < v:
                    yield u, v

    def to_json(self) -> str:
        return json.dumps(
            {
                "nodes": [[float(x), float(y)] for x, y in self.nodes],
                "edges": [[u, v] for u, v in self.edges()],
                "seed": self.seed,
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "Roadmap":
        doc = json.loads(text)
        nodes = np.asarray(doc["nodes"], dtype=float)
        adj = [set() for _ in range(len(nodes))]
        for u, v in doc["edges"]:
            adj[u].add(v)
            adj[v].add(u)
        return Roadmap(
            nodes=nodes,
            neighbors=tuple(tuple(sorted(s)) for s in adj),
            seed=doc.get("seed"),
        )


def _components(n: int, adj: list[set[int]]) -> list[list[int]]:
    seen = np.zeros(n, dtype=bool)
    comps = []
    for root in range(n):
        if seen[root]:
            continue
        stack, comp = [root], []
        seen[root] = True
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(v)
        comps.append(comp)
    return comps


def _repair_connectivity(nodes: np.ndarray, adj: list[set[int]]):
    """Attach every smaller component to the largest via its closest node pair."""
    while True:
        comps = _components(len(nodes), adj)
        if len(comps) == 1:
            return
        comps.sort(key=len, reverse=True)
        main = comps[0]
        for comp in comps[1:]:
            d = cdist(nodes[comp], nodes[main])
            i, j = np.unravel_index(np.argmin(d), d.shape)
            u, v = comp[i], main[j]
            adj[u].add(v)
            adj[v].add(u)


def build_prm(seed: int, n_nodes: int = 200, k: int = 20,
              start: tuple[float, float] | None = None) -> Roadmap:
    """Sample n_nodes uniform nodes and wire union-symmetrized k-NN edges.

    When a start position is given it becomes node 0 (the shared entry node
    used in evaluation runs); the remaining n_nodes - 1 nodes are sampled.
    """
    if n_nodes < k + 1:
        raise ValueError(f"need n_nodes >= k+1, got n_nodes={n_nodes}, k={k}")
    rng = np.random.default_rng(seed)
    nodes = rng.uniform(0.0, 1.0, size=(n_nodes, 2))
    if start is not None:
        nodes[0] = np.asarray(start, dtype=float)

    dists = cdist(nodes, nodes)
    np.fill_diagonal(dists, np.inf)
    adj: list[set[int]] = [set() for _ in range(n_nodes)]
    order = np.argsort(dists, axis=1, kind="stable")
    for u in range(n_nodes):
        for v in order[u, :k]:
            adj[u].add(int(v))
            adj[int(v)].add(u)

    _repair_connectivity(nodes, adj)
    return Roadmap(nodes=nodes, neighbors=tuple(tuple(sorted(s)) for s in adj), seed=seed)


@dataclass(frozen=True)
class PathQuery:
    source: int
    target: int
    path: tuple[int, ...]
    cost: float


def dijkstra_from(rm: Roadmap, source: int) -> tuple[np.ndarray, np.ndarray]:
    """Distances and predecessor array from `source` to every node."""
    n = rm.num_nodes
    dist = np.full(n, np.inf)
    parent = np.full(n, -1, dtype=int)
    dist[source] = 0.0
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u] + 1e-15:
            continue
        for v in rm.neighbors[u]:
            nd = d + rm.edge_length(u, v)
            if nd < dist[v] - 1e-15:
                dist[v] = nd
                parent[v] = u
                heapq.heappush(heap, (nd, v))
    return dist, parent


def shortest_path(rm: Roadmap, a: int, b: int) -> PathQuery:
    """Minimal-cost node sequence from a to b under Euclidean edge weights."""
    if not (0 <= a < rm.num_nodes and 0 <= b < rm.num_nodes):
        raise ValueError(f"invalid node ids ({a}, {b})")
    if a == b:
        return PathQuery(a, b, (a,), 0.0)
    dist, parent = dijkstra_from(rm, a)
    if not np.isfinite(dist[b]):
        raise RuntimeError(f"nodes {a} and {b} disconnected; roadmap invariant violated")
    path = [b]
    while path[-1] != a:
        path.append(int(parent[path[-1]]))
    path.reverse()
    return PathQuery(a, b, tuple(path), float(dist[b]))


class MaskResult(NamedTuple):
    feasible: np.ndarray     # bool per neighbor, aligned with rm.neighbors[node]
    deadlock_unmask: bool    # True when the fallback rule re-opened a neighbor


def feasibility_mask(rm: Roadmap, node: int, remaining_budget: float,
                     occupied: set[int] | frozenset[int] = frozenset(),
                     risk_ucb_nodes: np.ndarray | None = None,
                     risk_threshold: float = 0.7,
                     hard_risk: bool = False,
                     budget_tol: float = 1e-9) -> MaskResult:
    """Per-neighbor feasibility for the next waypoint choice.

    A neighbor is infeasible when its edge exceeds the remaining team budget,
    when another agent already committed to it this round, or (hard_risk)
    when its risk UCB clears the threshold. If everything is masked but some
    neighbor still fits the budget, the budget-feasible neighbor with the
    lowest risk UCB is re-opened so the episode cannot stall before budget
    exhaustion (ties broken by node id).
    """
    nbrs = rm.neighbors[node]
    costs = np.array([rm.edge_length(node, v) for v in nbrs])
    feasible = costs <= remaining_budget + budget_tol
    in_budget = feasible.copy()
    if occupied:
        feasible &= np.array([v not in occupied for v in nbrs])
    if hard_risk and risk_ucb_nodes is not None:
        feasible &= np.array([risk_ucb_nodes[v] < risk_threshold for v in nbrs])

    if not feasible.any() and in_budget.any():
        if risk_ucb_nodes is not None:
            risk = np.array([risk_ucb_nodes[v] for v in nbrs], dtype=float)
        else:
            risk = np.zeros(len(nbrs))
        risk = np.where(in_budget, risk, np.inf)
        feasible = np.zeros(len(nbrs), dtype=bool)
        feasible[int(np.argmin(risk))] = True  # argmin takes lowest index on ties
        return MaskResult(feasible, True)
    return MaskResult(feasible, False)
