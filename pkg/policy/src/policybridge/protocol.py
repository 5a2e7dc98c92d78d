"""Bridge wire format: length-delimited JSON frames plus schema validation.

Independent implementation of the episode engine's protocol (4-byte
big-endian length prefix, UTF-8 JSON body, per-sender monotone `seq`).
Every inbound frame is validated against its kind's published JSON schema;
malformed traffic raises ProtocolError and is answered with an error frame,
never a crash.
"""

from __future__ import annotations

import json
import struct
from importlib import resources

import jsonschema

PROTOCOL_VERSION = 1
MAX_FRAME = 16 * 1024 * 1024

KINDS = ("handshake", "reset", "observation", "action", "reward", "done",
         "intent_broadcast", "error")


class ProtocolError(RuntimeError):
    pass


def _load_schemas() -> dict:
    schemas = {}
    for kind in KINDS:
        text = resources.files("policybridge.schemas").joinpath(f"{kind}.json").read_text()
        schemas[kind] = json.loads(text)
    return schemas


SCHEMAS = _load_schemas()


def validate_message(msg: dict):
    kind = msg.get("kind")
    if kind not in SCHEMAS:
        raise ProtocolError(f"unknown message kind {kind!r}")
    try:
        jsonschema.validate(msg, SCHEMAS[kind])
    except jsonschema.ValidationError as exc:
        raise ProtocolError(f"{kind} frame failed schema validation: {exc.message}") from exc


def write_frame(stream, message: dict):
    body = json.dumps(message, sort_keys=True).encode()
    stream.write(struct.pack(">I", len(body)) + body)
    stream.flush()


def read_frame(stream) -> dict:
    header = stream.read(4)
    if not header:
        raise EOFError("stream closed")
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
    if not isinstance(msg, dict):
        raise ProtocolError("frame body must be a JSON object")
    return msg


class PolicyEndpoint:
    """Policy side of a bridge connection."""

    def __init__(self, reader, writer, validate: bool = True):
        self.reader = reader
        self.writer = writer
        self.validate = validate
        self.seq = 0
        self.peer_seq = -1

    def send(self, kind: str, **payload):
        self.seq += 1
        msg = {"kind": kind, "seq": self.seq, **payload}
        if self.validate:
            validate_message(msg)
        write_frame(self.writer, msg)

    def recv(self) -> dict:
        msg = read_frame(self.reader)
        if self.validate:
            try:
                validate_message(msg)
            except ProtocolError:
                self.send("error", message="schema validation failed")
                raise
        seq = msg.get("seq")
        if not isinstance(seq, int) or seq <= self.peer_seq:
            self.send("error", message=f"non-monotone seq {seq!r}")
            raise ProtocolError(f"non-monotone seq {seq!r}")
        self.peer_seq = seq
        if msg["kind"] == "error":
            raise ProtocolError(f"peer error: {msg.get('message')}")
        return msg

    def complete_handshake(self, first: dict):
        if first["kind"] != "handshake" or first.get("role") != "env":
            raise ProtocolError("expected an env handshake frame")
        if first.get("protocol") != PROTOCOL_VERSION:
            raise ProtocolError(f"protocol version mismatch: {first.get('protocol')}")
        self.send("handshake", role="policy", protocol=PROTOCOL_VERSION)
        return first

    def send_action(self, agent: int, step: int, neighbor_index: int):
        self.send("action", agent=agent, step=step, neighbor_index=neighbor_index)

    def send_intent(self, agent: int, step: int, mean, cov):
        self.send("intent_broadcast", agent=agent, step=step,
                  mean=[float(mean[0]), float(mean[1])],
                  cov=[[float(cov[0][0]), float(cov[0][1])],
                       [float(cov[1][0]), float(cov[1][1])]])
