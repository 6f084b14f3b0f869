/**
 * Socket client: connects to the service, performs the hello handshake,
 * routes frames into ClientState, and exposes the operator actions. DOM-free
 * so the whole session logic runs under node for tests; the browser layer
 * (main.ts) only wires DOM events to these methods.
 */

import {
  ClientMessageType,
  PROTOCOL_VERSION,
  WireMessage,
  decodeServer,
  encodeMessage,
  toStateFrame,
} from "./protocol.js";
import { ClientState } from "./state.js";
import { RateLimiter } from "./rateLimiter.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onopen: (() => void) | null;
  onclose: (() => void) | null;
  onerror: ((ev: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface TeleopEvents {
  onReply?: (msg: WireMessage) => void;
  onEvent?: (msg: WireMessage) => void;
  onStatus?: (status: string) => void;
}

const COMMAND_RATE_HZ = 30;
const RECONNECT_BASE_MS = 500;
const RECONNECT_MAX_MS = 8000;

export class TeleopClient {
  readonly state = new ClientState();
  private socket: SocketLike | null = null;
  private seq = 0;
  private readonly limiter: RateLimiter;
  private reconnectDelay = RECONNECT_BASE_MS;
  private closedByUser = false;
  private waiters: Map<number, (msg: WireMessage) => void> = new Map();

  constructor(
    private readonly url: string,
    private readonly makeSocket: SocketFactory,
    private readonly events: TeleopEvents = {},
    private readonly now: () => number = () => Date.now(),
    private readonly schedule = setTimeout,
  ) {
    this.limiter = new RateLimiter(COMMAND_RATE_HZ, this.now);
  }

  connect(): void {
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

  disconnect(): void {
    this.closedByUser = true;
    this.socket?.close();
  }

  get connected(): boolean {
    return this.state.status === "connected";
  }

  private handleRaw(raw: string): void {
    const msg = decodeServer(raw);
    if (msg === null) return;
    if (msg.type === "state") {
      const frame = toStateFrame(msg);
      if (frame !== null) this.state.offerFrame(frame);
      return;
    }
    if (msg.type === "error") {
      this.state.lastError = String(
        (msg.payload as Record<string, unknown>).message ?? "unknown error",
      );
    }
    if (msg.type === "event") {
      this.events.onEvent?.(msg);
      return;
    }
    const replyTo = (msg.payload as Record<string, unknown>).reply_to;
    if (typeof replyTo === "number" && this.waiters.has(replyTo)) {
      const resolve = this.waiters.get(replyTo)!;
      this.waiters.delete(replyTo);
      resolve(msg);
    }
    this.events.onReply?.(msg);
  }

  private sendNow(
    type: ClientMessageType,
    payload: Record<string, unknown> = {},
  ): number {
    if (this.socket === null) throw new Error("not connected");
    this.seq += 1;
    const seq = this.seq;
    this.socket.send(encodeMessage(type, seq, this.now() / 1000, payload));
    return seq;
  }

  /** Send and resolve with the matching ok/error reply. */
  request(
    type: ClientMessageType,
    payload: Record<string, unknown> = {},
  ): Promise<WireMessage> {
    const seq = this.sendNow(type, payload);
    return new Promise((resolve) => this.waiters.set(seq, resolve));
  }

  // --- operator actions (rate-limited where continuous) -------------------

  jog(joint: number, velocity: number): void {
    this.limiter.submit(() => {
      if (this.connected) this.sendNow("jog", { joint, velocity });
    });
  }

  /** Releasing a jog control must always send the zero-velocity stop. */
  jogStop(joint: number): void {
    if (this.connected) this.sendNow("jog", { joint, velocity: 0 });
  }

  drag(position: [number, number, number], orientation?: [number, number, number, number]): void {
    this.limiter.submit(() => {
      if (this.connected) {
        this.sendNow("drag", orientation ? { position, orientation } : { position });
      }
    });
  }

  setMode(mode: "IDLE" | "TELEOP"): Promise<WireMessage> {
    return this.request("mode", { mode });
  }

  recordStart(): Promise<WireMessage> {
    return this.request("record_start");
  }

  recordStop(): Promise<WireMessage> {
    return this.request("record_stop");
  }

  captureGoal(): Promise<WireMessage> {
    return this.request("capture_goal").then((msg) => {
      if (msg.type === "ok") {
        this.state.goalPreview =
          ((msg.payload as Record<string, unknown>).preview as Record<string, unknown>) ?? null;
      }
      return msg;
    });
  }

  rolloutPolicy(checkpoint: string, duration = 15): Promise<WireMessage> {
    return this.request("rollout_policy", { checkpoint, duration });
  }

  rolloutPlanner(qGoal: number[]): Promise<WireMessage> {
    return this.request("rollout_planner", { q_goal: qGoal });
  }

  abort(): Promise<WireMessage> {
    return this.request("abort");
  }
}
