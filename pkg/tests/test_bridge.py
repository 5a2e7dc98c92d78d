import io
import json
import socket
import threading

import numpy as np
import pytest

from maipp.bridge import (
    EnvEndpoint,
    ProtocolError,
    graph_payload,
    observation_payload,
    read_frame,
    serve,
    write_frame,
)
from maipp.episode import Episode, EpisodeConfig
from maipp.fields import FieldSpec, GaussianComponent, GroundTruth
from maipp.planners import GreedyPlanner, PlannerConfig, run_graph_episode
from maipp.roadmap import build_prm


def iso(cx, cy, std):
    return GaussianComponent(center=(cx, cy), spread=((std**2, 0), (0, std**2)))


def make_instance(n_nodes=60, budget=1.2, agents=2, seed=11):
    truth = GroundTruth(FieldSpec(
        interest_components=(iso(0.7, 0.6, 0.12), iso(0.2, 0.3, 0.1)),
        risk_components=(), noise_std=0.0))
    rm = build_prm(seed, n_nodes=n_nodes, k=8)
    cfg = EpisodeConfig(num_agents=agents, team_budget=budget,
                        risk_enabled=False, hard_risk=False)
    return truth, rm, cfg


# -- framing ---------------------------------------------------------------------


def test_frame_roundtrip():
    buf = io.BytesIO()
    write_frame(buf, {"kind": "handshake", "seq": 1, "role": "policy"})
    buf.seek(0)
    assert read_frame(buf) == {"kind": "handshake", "seq": 1, "role": "policy"}


def test_frame_truncated():
    buf = io.BytesIO(b"\x00\x00\x00\x10{\"kind\"")
    with pytest.raises(ProtocolError):
        read_frame(buf)


def test_frame_malformed_json():
    buf = io.BytesIO()
    body = b"not json"
    buf.write(len(body).to_bytes(4, "big") + body)
    buf.seek(0)
    with pytest.raises(ProtocolError):
        read_frame(buf)


def test_frame_missing_kind():
    buf = io.BytesIO()
    write_frame(buf, {"seq": 3})
    buf.seek(0)
    with pytest.raises(ProtocolError):
        read_frame(buf)


# -- serving -----------------------------------------------------------------------


class PolicyPeer:
    """Test-side policy speaking the protocol over a socket."""

    def __init__(self, stream, choose):
        self.stream = stream
        self.choose = choose
        self.seq = 0
        self.frames = []

    def send(self, kind, **payload):
        self.seq += 1
        write_frame(self.stream, {"kind": kind, "seq": self.seq, **payload})

    def run(self):
        while True:
            try:
                msg = read_frame(self.stream)
            except ProtocolError:
                return
            self.frames.append(msg)
            if msg["kind"] == "handshake":
                self.send("handshake", role="policy", protocol=1)
            elif msg["kind"] == "observation":
                idx = self.choose(msg)
                self.send("action", agent=msg["agent"], step=msg["step"],
                          neighbor_index=idx)
            elif msg["kind"] == "done":
                return
            elif msg["kind"] == "error":
                return


def serve_with_policy(truth, rm, cfg, seed, choose):
    engine = Episode(truth, rm, cfg, seed=seed)
    left, right = socket.socketpair()
    lf, rf = left.makefile("rwb"), right.makefile("rwb")
    peer = PolicyPeer(rf, choose)
    worker = threading.Thread(target=peer.run)
    worker.start()
    err = None
    try:
        serve(lf, lf, [engine], [graph_payload(rm)])
    except ProtocolError as exc:
        err = exc
    finally:
        lf.close()
        left.close()
        worker.join(timeout=10)
        rf.close()
        right.close()
    return engine, peer, err


def test_bridge_replay_matches_in_process_greedy():
    truth, rm, cfg, seed = (*make_instance(), 7)

    inproc = Episode(truth, rm, cfg, seed=seed)
    run_graph_episode(inproc, GreedyPlanner(PlannerConfig(kind="greedy")), seed=99)
    actions = {rec["step"]: rec["actions"] for rec in inproc.records}

    def choose(obs_msg):
        node = actions[obs_msg["step"]][obs_msg["agent"]]
        return obs_msg["neighbors"].index(node)

    served, peer, err = serve_with_policy(truth, rm, cfg, seed, choose)
    assert err is None
    assert served.done and served.cause == inproc.cause
    assert len(served.records) == len(inproc.records)
    for a, b in zip(served.records, inproc.records):
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    assert served.final_trace() == inproc.final_trace()


def test_bridge_rejects_masked_action():
    truth, rm, cfg = make_instance(budget=0.4)

    def choose(obs_msg):
        mask = obs_msg["mask"]
        for i, ok in enumerate(mask):
            if not ok:
                return i  # deliberately pick a masked neighbor
        return 0

    served, peer, err = serve_with_policy(truth, rm, cfg, 3, choose)
    assert err is not None
    assert any(f["kind"] == "error" for f in peer.frames)


def test_bridge_rejects_out_of_range_index():
    truth, rm, cfg = make_instance()

    def choose(obs_msg):
        return 10_000

    served, peer, err = serve_with_policy(truth, rm, cfg, 3, choose)
    assert err is not None


def test_reset_and_observation_schema():
    truth, rm, cfg = make_instance(n_nodes=200)

    frames = []

    def choose(obs_msg):
        return obs_msg["mask"].index(True)

    served, peer, err = serve_with_policy(truth, rm, cfg, 5, choose)
    assert err is None
    resets = [f for f in peer.frames if f["kind"] == "reset"]
    assert len(resets) == 1
    assert len(resets[0]["graph"]["nodes"]) == 200
    obs = [f for f in peer.frames if f["kind"] == "observation"]
    assert obs, "no observations seen"
    for f in obs:
        n = len(f["interest_mean"])
        # interest node attributes: (mean, std, intent) -> arity 3
        assert len(f["interest_std"]) == n and len(f["intent_field"]) == n
        assert len(f["risk_ucb"]) == n
        assert len(f["mask"]) == len(f["neighbors"])
    rewards = [f for f in peer.frames if f["kind"] == "reward"]
    assert len(rewards) == len(served.records) * cfg.num_agents
    assert peer.frames[-1]["kind"] == "done"


def test_sequence_numbers_monotone():
    truth, rm, cfg = make_instance()

    def choose(obs_msg):
        return obs_msg["mask"].index(True)

    served, peer, err = serve_with_policy(truth, rm, cfg, 5, choose)
    seqs = [f["seq"] for f in peer.frames]
    assert seqs == sorted(seqs)
    assert len(set(seqs)) == len(seqs)
