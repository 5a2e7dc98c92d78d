"""Bridge client: spawns the episode engine CLI and walks its frame stream."""

from __future__ import annotations

import subprocess
import sys

import numpy as np
import torch

from .net import LAPLACIAN_DIM, laplacian_positional_encoding
from .protocol import PolicyEndpoint, ProtocolError, read_frame


def serve_command(field_seed=0, map_seed=0, episode_seed=0, agents=1, nodes=50, k=8,
                  budget=1.0, comm_range="global", risk=False, episodes=1,
                  start="shared", vary=False, trace_out=None, maipp_bin="maipp"):
    cmd = [
        maipp_bin, "serve",
        "--transport", "stdio",
        "--field-seed", str(field_seed),
        "--map-seed", str(map_seed),
        "--episode-seed", str(episode_seed),
        "--agents", str(agents),
        "--nodes", str(nodes),
        "--k", str(k),
        "--budget", str(budget),
        "--comm-range", str(comm_range),
        "--episodes", str(episodes),
        "--start", start,
        "--risk" if risk else "--no-risk",
        "--vary" if vary else "--no-vary",
    ]
    if trace_out:
        cmd += ["--trace-out", str(trace_out)]
    return cmd


class BridgeEnv:
    """One engine subprocess; yields protocol events until the stream closes.

    Events: ("reset", msg), ("observation", msg) [caller must answer with
    act()], ("reward", msg), ("done", msg).
    """

    def __init__(self, cmd, validate=True, pe_dim=LAPLACIAN_DIM, dtype=torch.float32):
        self.proc = subprocess.Popen(cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                     stderr=subprocess.DEVNULL)
        self.endpoint = PolicyEndpoint(self.proc.stdout, self.proc.stdin, validate=validate)
        self.pe_dim = pe_dim
        self.dtype = dtype
        self.handshake = self.endpoint.complete_handshake(self.endpoint.recv())
        self.graph = None
        self.pe = None

    def events(self):
        while True:
            try:
                msg = self.endpoint.recv()
            except (EOFError, ProtocolError):
                return
            if msg["kind"] == "reset":
                self.graph = msg["graph"]
                pe = laplacian_positional_encoding(
                    len(self.graph["nodes"]), self.graph["edges"], self.pe_dim)
                self.pe = torch.as_tensor(pe, dtype=self.dtype)
            yield msg["kind"], msg
            if msg["kind"] == "done" and msg["episode"] + 1 >= self.handshake.get("episodes", 1):
                return

    def act(self, agent: int, step: int, neighbor_index: int):
        self.endpoint.send_action(agent, step, neighbor_index)

    def close(self):
        try:
            self.proc.stdin.close()
        except Exception:
            pass
        self.proc.wait(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
