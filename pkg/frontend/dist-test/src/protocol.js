/**
 * Wire protocol mirror of the service: JSON messages over websocket text
 * frames, {type, seq, ts, payload}. Outbound messages carry the client
 * timestamp; unknown inbound types are surfaced as errors to the caller.
 */
export const PROTOCOL_VERSION = 1;
const SERVER_TYPES = new Set([
    "hello",
    "state",
    "ok",
    "error",
    "event",
]);
export function encodeMessage(type, seq, ts, payload = {}) {
    return JSON.stringify({ type, seq, ts, payload });
}
/** Parse a raw server frame; returns null (with a console diagnostic) on a
 * malformed frame so the render loop just drops it. */
export function decodeServer(raw) {
    let msg;
    try {
        msg = JSON.parse(raw);
    }
    catch (err) {
        console.warn("dropping malformed frame:", err);
        return null;
    }
    if (typeof msg !== "object" || msg === null) {
        console.warn("dropping non-object frame");
        return null;
    }
    const m = msg;
    if (typeof m.type !== "string" ||
        !SERVER_TYPES.has(m.type) ||
        typeof m.seq !== "number" ||
        typeof m.ts !== "number") {
        console.warn("dropping frame with bad envelope:", m.type);
        return null;
    }
    if (m.payload === undefined)
        m.payload = {};
    if (typeof m.payload !== "object" || m.payload === null) {
        console.warn("dropping frame with bad payload");
        return null;
    }
    return m;
}
/** Validate and convert a state payload; null when fields are missing. */
export function toStateFrame(msg) {
    const p = msg.payload;
    const q = p.q;
    const links = p.links;
    const ee = p.ee;
    if (!Array.isArray(q) || q.length !== 6 || !Array.isArray(links) || !ee) {
        console.warn("dropping state frame with missing kinematics");
        return null;
    }
    return {
        seq: msg.seq,
        simTime: p.sim_time ?? msg.ts,
        q,
        qdot: p.qdot ?? [0, 0, 0, 0, 0, 0],
        mode: p.mode ?? "IDLE",
        collided: Boolean(p.collided),
        recording: Boolean(p.recording),
        goalSet: Boolean(p.goal_set),
        features: p.features ?? [],
        ee,
        links,
        capsules: p.capsules ?? [],
    };
}
