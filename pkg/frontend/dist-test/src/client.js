/**
 * Socket client: connects to the service, performs the hello handshake,
 * routes frames into ClientState, and exposes the operator actions. DOM-free
 * so the whole session logic runs under node for tests; the browser layer
 * (main.ts) only wires DOM events to these methods.
 */
import { PROTOCOL_VERSION, decodeServer, encodeMessage, toStateFrame, } from "./protocol.js";
import { ClientState } from "./state.js";
import { RateLimiter } from "./rateLimiter.js";
const COMMAND_RATE_HZ = 30;
const RECONNECT_BASE_MS = 500;
const RECONNECT_MAX_MS = 8000;
export class TeleopClient {
    url;
    makeSocket;
    events;
    now;
    schedule;
    state = new ClientState();
    socket = null;
    seq = 0;
    limiter;
    reconnectDelay = RECONNECT_BASE_MS;
    closedByUser = false;
    waiters = new Map();
    constructor(url, makeSocket, events = {}, now = () => Date.now(), schedule = setTimeout) {
        this.url = url;
        this.makeSocket = makeSocket;
        this.events = events;
        this.now = now;
        this.schedule = schedule;
        this.limiter = new RateLimiter(COMMAND_RATE_HZ, this.now);
    }
    connect() {
        this.closedByUser = false;
        this.state.status = "connecting";
        this.events.onStatus?.("connecting");
        const sock = this.makeSocket(this.url);
        this.socket = sock;
        sock.onopen = () => {
            this.state.status = "connected";
            this.reconnectDelay = RECONNECT_BASE_MS;
            this.events.onStatus?.("connected");
            this.sendNow("hello", { version: PROTOCOL_VERSION });
        };
        sock.onmessage = (ev) => this.handleRaw(String(ev.data));
        sock.onclose = () => {
            this.state.status = "disconnected";
            this.events.onStatus?.("disconnected");
            this.socket = null;
            if (!this.closedByUser) {
                this.schedule(() => this.connect(), this.reconnectDelay);
                this.reconnectDelay = Math.min(this.reconnectDelay * 2, RECONNECT_MAX_MS);
            }
        };
        sock.onerror = () => {
            /* onclose follows; nothing else to do */
        };
    }
    disconnect() {
        this.closedByUser = true;
        this.socket?.close();
    }
    get connected() {
        return this.state.status === "connected";
    }
    handleRaw(raw) {
        const msg = decodeServer(raw);
        if (msg === null)
            return;
        if (msg.type === "state") {
            const frame = toStateFrame(msg);
            if (frame !== null)
                this.state.offerFrame(frame);
            return;
        }
        if (msg.type === "error") {
            this.state.lastError = String(msg.payload.message ?? "unknown error");
        }
        if (msg.type === "event") {
            this.events.onEvent?.(msg);
            return;
        }
        const replyTo = msg.payload.reply_to;
        if (typeof replyTo === "number" && this.waiters.has(replyTo)) {
            const resolve = this.waiters.get(replyTo);
            this.waiters.delete(replyTo);
            resolve(msg);
        }
        this.events.onReply?.(msg);
    }
    sendNow(type, payload = {}) {
        if (this.socket === null)
            throw new Error("not connected");
        this.seq += 1;
        const seq = this.seq;
        this.socket.send(encodeMessage(type, seq, this.now() / 1000, payload));
        return seq;
    }
    /** Send and resolve with the matching ok/error reply. */
    request(type, payload = {}) {
        const seq = this.sendNow(type, payload);
        return new Promise((resolve) => this.waiters.set(seq, resolve));
    }
    // --- operator actions (rate-limited where continuous) -------------------
    jog(joint, velocity) {
        this.limiter.submit(() => {
            if (this.connected)
                this.sendNow("jog", { joint, velocity });
        });
    }
    /** Releasing a jog control must always send the zero-velocity stop. */
    jogStop(joint) {
        if (this.connected)
            this.sendNow("jog", { joint, velocity: 0 });
    }
    drag(position, orientation) {
        this.limiter.submit(() => {
            if (this.connected) {
                this.sendNow("drag", orientation ? { position, orientation } : { position });
            }
        });
    }
    setMode(mode) {
        return this.request("mode", { mode });
    }
    recordStart() {
        return this.request("record_start");
    }
    recordStop() {
        return this.request("record_stop");
    }
    captureGoal() {
        return this.request("capture_goal").then((msg) => {
            if (msg.type === "ok") {
                this.state.goalPreview =
                    msg.payload.preview ?? null;
            }
            return msg;
        });
    }
    rolloutPolicy(checkpoint, duration = 15) {
        return this.request("rollout_policy", { checkpoint, duration });
    }
    rolloutPlanner(qGoal) {
        return this.request("rollout_planner", { q_goal: qGoal });
    }
    abort() {
        return this.request("abort");
    }
}
