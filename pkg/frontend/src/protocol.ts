/**
 * Wire protocol mirror of the service: JSON messages over websocket text
 * frames, {type, seq, ts, payload}. Outbound messages carry the client
 * timestamp; unknown inbound types are surfaced as errors to the caller.
 */

export const PROTOCOL_VERSION = 1;

export type ClientMessageType =
  | "hello"
  | "jog"
  | "drag"
  | "mode"
  | "record_start"
  | "record_stop"
  | "capture_goal"
  | "rollout_policy"
  | "rollout_planner"
  | "abort";

export type ServerMessageType = "hello" | "state" | "ok" | "error" | "event";

export interface WireMessage {
  type: string;
  seq: number;
  ts: number;
  payload: Record<string, unknown>;
}

export interface PoseWire {
  position: [number, number, number];
  orientation: [number, number, number, number];
}

export interface CapsuleWire {
  p0: [number, number, number];
  p1: [number, number, number];
  radius: number;
}

export interface StateFrame {
  seq: number;
  simTime: number;
  q: number[];
  qdot: number[];
  mode: string;
  collided: boolean;
  recording: boolean;
  goalSet: boolean;
  features: number[];
  ee: PoseWire;
  links: PoseWire[];
  capsules: CapsuleWire[];
}

const SERVER_TYPES: ReadonlySet<string> = new Set([
  "hello",
  "state",
  "ok",
  "error",
  "event",
]);

export function encodeMessage(
  type: ClientMessageType,
  seq: number,
  ts: number,
  payload: Record<string, unknown> = {},
): string {
  return JSON.stringify({ type, seq, ts, payload });
}

/** Parse a raw server frame; returns null (with a console diagnostic) on a
 * malformed frame so the render loop just drops it. */
export function decodeServer(raw: string): WireMessage | null {
  let msg: unknown;
  try {
    msg = JSON.parse(raw);
  } catch (err) {
    console.warn("dropping malformed frame:", err);
    return null;
  }
  if (typeof msg !== "object" || msg === null) {
    console.warn("dropping non-object frame");
    return null;
  }
  const m = msg as Record<string, unknown>;
  if (
    typeof m.type !== "string" ||
    !SERVER_TYPES.has(m.type) ||
    typeof m.seq !== "number" ||
    typeof m.ts !== "number"
  ) {
    console.warn("dropping frame with bad envelope:", m.type);
    return null;
  }
  if (m.payload === undefined) m.payload = {};
  if (typeof m.payload !== "object" || m.payload === null) {
    console.warn("dropping frame with bad payload");
    return null;
  }
  return m as unknown as WireMessage;
}

/** Validate and convert a state payload; null when fields are missing. */
export function toStateFrame(msg: WireMessage): StateFrame | null {
  const p = msg.payload as Record<string, unknown>;
  const q = p.q as number[] | undefined;
  const links = p.links as PoseWire[] | undefined;
  const ee = p.ee as PoseWire | undefined;
  if (!Array.isArray(q) || q.length !== 6 || !Array.isArray(links) || !ee) {
    console.warn("dropping state frame with missing kinematics");
    return null;
  }
  return {
    seq: msg.seq,
    simTime: (p.sim_time as number) ?? msg.ts,
    q,
    qdot: (p.qdot as number[]) ?? [0, 0, 0, 0, 0, 0],
    mode: (p.mode as string) ?? "IDLE",
    collided: Boolean(p.collided),
    recording: Boolean(p.recording),
    goalSet: Boolean(p.goal_set),
    features: (p.features as number[]) ?? [],
    ee,
    links,
    capsules: (p.capsules as CapsuleWire[]) ?? [],
  };
}
