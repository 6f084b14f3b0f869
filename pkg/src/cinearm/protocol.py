"""Wire protocol for the teleoperation service.

Messages are JSON objects over websocket text frames:
{"type": str, "seq": int, "ts": float, "payload": {...}}.

Client -> server types: hello, jog, drag, mode, record_start, record_stop,
capture_goal, rollout_policy, rollout_planner, abort.
Server -> client types: hello, state, ok, error, event.
Unknown types are answered with an error carrying the offending sequence
number. The version handshake pins PROTOCOL_VERSION.
"""
from __future__ import annotations

import json

PROTOCOL_VERSION = 1

CLIENT_TYPES = {
    "hello", "jog", "drag", "mode", "record_start", "record_stop",
    "capture_goal", "rollout_policy", "rollout_planner", "abort",
}
SERVER_TYPES = {"hello", "state", "ok", "error", "event"}


class ProtocolError(ValueError):
    def __init__(self, message: str, seq: int | None = None):
        super().__init__(message)
        self.seq = seq


def encode(msg_type: str, seq: int, ts: float, payload: dict | None = None) -> str:
    return json.dumps(
        {"type": msg_type, "seq": seq, "ts": ts, "payload": payload or {}},
        sort_keys=True, separators=(",", ":"),
    )


def decode_client(raw: str) -> dict:
    """Parse and validate one client message; raises ProtocolError."""
    try:
        msg = json.loads(raw)
    except json.JSONDecodeError as ex:
        raise ProtocolError(f"malformed JSON: {ex}") from ex
    if not isinstance(msg, dict):
        raise ProtocolError("message must be an object")
    seq = msg.get("seq")
    if not isinstance(seq, int):
        raise ProtocolError("missing integer seq")
    mtype = msg.get("type")
    if mtype not in CLIENT_TYPES:
        raise ProtocolError(f"unknown message type {mtype!r}", seq=seq)
    if not isinstance(msg.get("ts"), (int, float)):
        raise ProtocolError("missing numeric ts", seq=seq)
    payload = msg.get("payload", {})
    if not isinstance(payload, dict):
        raise ProtocolError("payload must be an object", seq=seq)
    _validate_payload(mtype, payload, seq)
    msg["payload"] = payload
    return msg


def _validate_payload(mtype: str, payload: dict, seq: int) -> None:
    if mtype == "jog":
        joint = payload.get("joint")
        if not isinstance(joint, int) or not 0 <= joint < 6:
            raise ProtocolError("jog.joint must be an index in [0, 6)", seq=seq)
        if not isinstance(payload.get("velocity"), (int, float)):
            raise ProtocolError("jog.velocity must be a number", seq=seq)
    elif mtype == "drag":
        pos = payload.get("position")
        if not (isinstance(pos, list) and len(pos) == 3):
            raise ProtocolError("drag.position must be a 3-vector", seq=seq)
        quat = payload.get("orientation")
        if quat is not None and not (isinstance(quat, list) and len(quat) == 4):
            raise ProtocolError("drag.orientation must be a quaternion (w,x,y,z)", seq=seq)
    elif mtype == "mode":
        if payload.get("mode") not in {"IDLE", "TELEOP"}:
            raise ProtocolError("mode must be IDLE or TELEOP", seq=seq)
    elif mtype == "rollout_policy":
        if not isinstance(payload.get("checkpoint"), str):
            raise ProtocolError("rollout_policy.checkpoint must be a path", seq=seq)
    elif mtype == "hello":
        version = payload.get("version")
        if version is not None and version != PROTOCOL_VERSION:
            raise ProtocolError(f"unsupported protocol version {version}", seq=seq)


def error_reply(seq_out: int, ts: float, message: str, reply_to: int | None) -> str:
    return encode("error", seq_out, ts, {"message": message, "reply_to": reply_to})
