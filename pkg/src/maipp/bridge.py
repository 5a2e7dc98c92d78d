"""Wire protocol for driving episodes with an out-of-process policy.

Frames are length-delimited JSON: a 4-byte big-endian payload size followed
by the UTF-8 body. Every frame carries a `kind`, a monotone per-sender `seq`,
and kind-specific payload fields. The environment strictly alternates
observation -> action per agent per round; `intent_broadcast` frames may be
interleaved by the policy side before its action. Invalid or masked actions
are answered with an `error` frame and abort the episode (no silent
fallback).

Kinds: handshake, reset, observation, action, reward, done, intent_broadcast,
error.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .episode import Episode
from .intent import IntentDistribution

PROTOCOL_VERSION = 1
MAX_FRAME = 16 * 1024 * 1024


class ProtocolError(RuntimeError):
    pass


def write_frame(stream, message: dict):
    body = json.dumps(message, sort_keys=True).encode()
    stream.write(struct.pack(">I", len(body)) + body)
    stream.flush()


def read_frame(stream) -> dict:
    header = stream.read(4)
    if not header:
        raise ProtocolError("stream closed")
    if len(header) < 4:
        raise ProtocolError("truncated frame header")
    (size,) = struct.unpack(">I", header)
    if size > MAX_FRAME:
        raise ProtocolError(f"frame of {size} bytes exceeds limit")
    body = b""
    while len(body) < size:
        chunk = stream.read(size - len(body))
        if not chunk:
            raise ProtocolError("truncated frame body")
        body += chunk
    try:
        msg = json.loads(body.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed frame: {exc}") from exc
    if not isinstance(msg, dict) or "kind" not in msg:
        raise ProtocolError("frame missing 'kind'")
    return msg


def observation_payload(obs) -> dict:
    return {
        "agent": obs.agent_id,
        "step": obs.step,
        "current_node": obs.current_node,
        "neighbors": list(obs.neighbors),
        "mask": [bool(b) for b in obs.mask],
        "interest_mean": [float(v) for v in obs.interest_mean],
        "interest_std": [float(v) for v in obs.interest_std],
        "intent_field": [float(v) for v in obs.intent_field],
        "risk_ucb": [float(v) for v in obs.risk_ucb],
        "budget_fraction": float(obs.budget_fraction),
        "trajectory_tail": list(obs.trajectory_tail),
        "mu_th": float(obs.mu_th),
    }


class EnvEndpoint:
    """Environment side of the bridge: serves episodes over a byte stream."""

    def __init__(self, reader, writer):
        self.reader = reader
        self.writer = writer
        self.seq = 0
        self.peer_seq = -1

    def send(self, kind: str, **payload):
        self.seq += 1
        write_frame(self.writer, {"kind": kind, "seq": self.seq, **payload})

    def recv(self, expected_kinds) -> dict:
        msg = read_frame(self.reader)
        seq = msg.get("seq")
        if not isinstance(seq, int) or seq <= self.peer_seq:
            self.fail(f"non-monotone or missing seq {seq!r}")
        self.peer_seq = seq
        if msg["kind"] == "error":
            raise ProtocolError(f"peer error: {msg.get('message')}")
        if msg["kind"] not in expected_kinds:
            self.fail(f"expected one of {expected_kinds}, got {msg['kind']!r}")
        return msg

    def fail(self, message: str):
        try:
            self.send("error", message=message)
        except Exception:
            pass
        raise ProtocolError(message)

    def handshake(self, num_agents: int, num_nodes: int, episodes: int):
        self.send("handshake", role="env", protocol=PROTOCOL_VERSION,
                  num_agents=num_agents, num_nodes=num_nodes, episodes=episodes)
        reply = self.recv({"handshake"})
        if reply.get("role") != "policy" or reply.get("protocol") != PROTOCOL_VERSION:
            self.fail("bad handshake reply")

    def serve_episode(self, engine: Episode, episode_id: int, graph_payload: dict) -> None:
        engine.reset()
        self.send("reset", episode=episode_id,
                  num_agents=engine.config.num_agents,
                  team_budget=engine.config.team_budget,
                  graph=graph_payload)
        while not engine.done:
            actions: list[int | None] = []
            for i in range(engine.config.num_agents):
                obs = engine.observe(i)
                if not obs.mask.any():
                    actions.append(None)
                    continue
                self.send("observation", **observation_payload(obs))
                msg = self.recv({"action", "intent_broadcast"})
                while msg["kind"] == "intent_broadcast":
                    engine.set_intent(msg["agent"], IntentDistribution(
                        agent_id=msg["agent"], step=msg["step"],
                        mean=tuple(msg["mean"]), cov=tuple(tuple(r) for r in msg["cov"]),
                    ))
                    msg = self.recv({"action"})
                if msg.get("agent") != i or msg.get("step") != engine.step_index:
                    self.fail(f"action for wrong agent/step: {msg}")
                idx = msg.get("neighbor_index")
                if not isinstance(idx, int) or not (0 <= idx < len(obs.neighbors)):
                    self.fail(f"neighbor_index {idx!r} out of range")
                if not obs.mask[idx]:
                    self.fail(f"agent {i}: neighbor_index {idx} is masked")
                actions.append(obs.neighbors[idx])
            if all(a is None for a in actions):
                break
            _, rewards, done = engine.step(actions)
            rec = engine.records[-1]
            for i in range(engine.config.num_agents):
                self.send("reward", agent=i, step=rec["step"], reward=rewards[i],
                          events=rec["events"][i], phi=rec["phi_agents"][i])
        self.send("done", episode=episode_id, cause=engine.cause,
                  final_trace=engine.final_trace(), steps=engine.step_index)


def graph_payload(rm) -> dict:
    return {
        "nodes": [[float(x), float(y)] for x, y in rm.nodes],
        "edges": [[int(u), int(v)] for u, v in rm.edges()],
    }


def serve(reader, writer, engines, graph_payloads) -> None:
    """Run a sequence of episodes over one connection, then close."""
    endpoint = EnvEndpoint(reader, writer)
    first = engines[0]
    endpoint.handshake(first.config.num_agents, first.rm.num_nodes, len(engines))
    for episode_id, (engine, payload) in enumerate(zip(engines, graph_payloads)):
        endpoint.serve_episode(engine, episode_id, payload)


class ExternalPlanner:
    """Planner adapter that defers each action to the bridge peer.

    Fits the in-process driver loop: `decide` serializes the observation,
    waits for the peer's action frame, validates it against the mask, and
    returns the chosen neighbor node.
    """

    def __init__(self, endpoint: EnvEndpoint):
        self.endpoint = endpoint

    def decide(self, engine: Episode, obs, rng=None):
        self.endpoint.send("observation", **observation_payload(obs))
        msg = self.endpoint.recv({"action", "intent_broadcast"})
        intent = None
        while msg["kind"] == "intent_broadcast":
            intent = IntentDistribution(
                agent_id=msg["agent"], step=msg["step"],
                mean=tuple(msg["mean"]), cov=tuple(tuple(r) for r in msg["cov"]),
            )
            msg = self.endpoint.recv({"action"})
        idx = msg.get("neighbor_index")
        if not isinstance(idx, int) or not (0 <= idx < len(obs.neighbors)):
            self.endpoint.fail(f"neighbor_index {idx!r} out of range")
        if not obs.mask[idx]:
            self.endpoint.fail(f"agent {obs.agent_id}: neighbor_index {idx} is masked")
        return obs.neighbors[idx], intent
