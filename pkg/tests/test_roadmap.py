import numpy as np
import pytest

from maipp.roadmap import (
    MaskResult,
    Roadmap,
    build_prm,
    dijkstra_from,
    feasibility_mask,
    shortest_path,
)
from oracles import enumerate_shortest_path


def manual_roadmap(points, edges):
    adj = [set() for _ in points]
    for u, v in edges:
        adj[u].add(v)
        adj[v].add(u)
    return Roadmap(nodes=np.asarray(points, dtype=float),
                   neighbors=tuple(tuple(sorted(s)) for s in adj))


def random_connected_graph(rng, n, k=3):
    rm = build_prm(int(rng.integers(0, 2**31)), n_nodes=n, k=min(k, n - 1))
    return rm


# -- construction ---------------------------------------------------------------


def test_build_deterministic():
    a = build_prm(99, n_nodes=200, k=20)
    b = build_prm(99, n_nodes=200, k=20)
    assert np.array_equal(a.nodes, b.nodes)
    assert a.neighbors == b.neighbors


def test_small_complete_graph():
    rm = build_prm(5, n_nodes=5, k=4)
    for u in range(5):
        assert set(rm.neighbors[u]) == set(range(5)) - {u}


def test_start_becomes_node_zero():
    rm = build_prm(1, n_nodes=50, k=5, start=(0.5, 0.5))
    assert np.allclose(rm.nodes[0], [0.5, 0.5])


def test_connectivity_and_degree_over_seeds():
    for seed in range(100):
        rm = build_prm(seed, n_nodes=200, k=20)
        dist, _ = dijkstra_from(rm, 0)
        assert np.all(np.isfinite(dist)), f"seed {seed} produced a disconnected graph"
        avg_degree = sum(len(n) for n in rm.neighbors) / rm.num_nodes
        assert avg_degree >= 20
        assert min(len(n) for n in rm.neighbors) >= 20


def test_edge_symmetry_and_weights():
    rm = build_prm(3, n_nodes=100, k=10)
    for u, nbrs in enumerate(rm.neighbors):
        for v in nbrs:
            assert u in rm.neighbors[v]
            assert rm.edge_length(u, v) == pytest.approx(
                float(np.linalg.norm(rm.nodes[u] - rm.nodes[v])), abs=1e-12)


def test_json_roundtrip():
    rm = build_prm(8, n_nodes=40, k=6)
    back = Roadmap.from_json(rm.to_json())
    assert np.allclose(back.nodes, rm.nodes)
    assert back.neighbors == rm.neighbors


# -- shortest paths ----------------------------------------------------------------


def test_trivial_same_node():
    rm = build_prm(1, n_nodes=20, k=4)
    q = shortest_path(rm, 7, 7)
    assert q.path == (7,)
    assert q.cost == 0.0


def test_direct_edge_beats_detour():
    rm = manual_roadmap([(0, 0), (1, 0), (0.5, 0.4)], [(0, 1), (0, 2), (1, 2)])
    q = shortest_path(rm, 0, 1)
    assert q.path == (0, 1)
    assert q.cost == pytest.approx(1.0)


def test_cost_symmetry():
    rm = build_prm(17, n_nodes=60, k=6)
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b = rng.integers(0, 60, 2)
        assert shortest_path(rm, int(a), int(b)).cost == pytest.approx(
            shortest_path(rm, int(b), int(a)).cost, abs=1e-12)


def test_path_cost_equals_segment_sum():
    rm = build_prm(23, n_nodes=80, k=8)
    q = shortest_path(rm, 0, 40)
    seg_sum = sum(rm.edge_length(q.path[i], q.path[i + 1]) for i in range(len(q.path) - 1))
    assert q.cost == pytest.approx(seg_sum, abs=1e-9)


def test_dijkstra_matches_enumeration_oracle():
    rng = np.random.default_rng(12345)
    checked = 0
    for g in range(50):
        n = int(rng.integers(5, 13))
        rm = build_prm(int(rng.integers(0, 2**31)), n_nodes=n, k=min(3, n - 1))
        adjacency = {u: list(rm.neighbors[u]) for u in range(n)}
        for _ in range(4):
            a, b = rng.integers(0, n, 2)
            expected_cost, _ = enumerate_shortest_path(rm.nodes, adjacency, int(a), int(b))
            got = shortest_path(rm, int(a), int(b))
            assert got.cost == pytest.approx(expected_cost, abs=1e-9)
            checked += 1
    assert checked == 200


# -- feasibility mask ----------------------------------------------------------------


def diamond_fixture():
    # node 0 center; neighbors 1..4 at distances 0.2/0.3/0.4/0.5
    pts = [(0.5, 0.5), (0.7, 0.5), (0.5, 0.8), (0.1, 0.5), (0.5, 0.0), (0.9, 0.9)]
    edges = [(0, 1), (0, 2), (0, 3), (0, 4), (1, 5), (2, 5), (3, 4)]
    return manual_roadmap(pts, edges)


def test_mask_budget_exhausted():
    rm = diamond_fixture()
    res = feasibility_mask(rm, 0, remaining_budget=0.0)
    assert not res.feasible.any()
    assert not res.deadlock_unmask  # nothing within budget -> no unmask


def test_mask_budget_cutoff():
    rm = diamond_fixture()
    res = feasibility_mask(rm, 0, remaining_budget=0.35)
    nbrs = rm.neighbors[0]
    for j, v in enumerate(nbrs):
        assert res.feasible[j] == (rm.edge_length(0, v) <= 0.35 + 1e-9)


def test_mask_occupied_nodes():
    rm = diamond_fixture()
    res = feasibility_mask(rm, 0, remaining_budget=10.0, occupied={2, 3})
    nbrs = rm.neighbors[0]
    for j, v in enumerate(nbrs):
        assert res.feasible[j] == (v not in {2, 3})


def test_mask_risk_threshold():
    rm = diamond_fixture()
    risk = np.zeros(rm.num_nodes)
    risk[2] = 0.85  # exactly one neighbor above 0.7
    res = feasibility_mask(rm, 0, remaining_budget=10.0, risk_ucb_nodes=risk,
                           risk_threshold=0.7, hard_risk=True)
    nbrs = rm.neighbors[0]
    assert [not res.feasible[j] for j, v in enumerate(nbrs)] == [v == 2 for v in nbrs]


def test_mask_hard_risk_off_ignores_risk():
    rm = diamond_fixture()
    risk = np.full(rm.num_nodes, 0.99)
    res = feasibility_mask(rm, 0, remaining_budget=10.0, risk_ucb_nodes=risk,
                           risk_threshold=0.7, hard_risk=False)
    assert res.feasible.all()


def test_mask_deadlock_rule():
    rm = diamond_fixture()
    risk = np.full(rm.num_nodes, 0.9)
    risk[3] = 0.75  # least risky, still above threshold
    res = feasibility_mask(rm, 0, remaining_budget=10.0, risk_ucb_nodes=risk,
                           risk_threshold=0.7, hard_risk=True)
    assert res.deadlock_unmask
    nbrs = rm.neighbors[0]
    assert res.feasible.sum() == 1
    assert nbrs[int(np.flatnonzero(res.feasible)[0])] == 3


def test_mask_deadlock_respects_budget():
    rm = diamond_fixture()
    risk = np.full(rm.num_nodes, 0.9)
    risk[4] = 0.71  # least risky but out of budget below
    res = feasibility_mask(rm, 0, remaining_budget=0.25, risk_ucb_nodes=risk,
                           risk_threshold=0.7, hard_risk=True)
    assert res.deadlock_unmask
    nbrs = rm.neighbors[0]
    chosen = nbrs[int(np.flatnonzero(res.feasible)[0])]
    assert rm.edge_length(0, chosen) <= 0.25 + 1e-9
