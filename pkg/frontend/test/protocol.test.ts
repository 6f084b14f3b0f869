import { test } from "node:test";
import assert from "node:assert/strict";

import {
  decodeServer,
  encodeMessage,
  toStateFrame,
  PROTOCOL_VERSION,
} from "../src/protocol.js";

test("encodeMessage produces the wire envelope", () => {
  const raw = encodeMessage("jog", 7, 1.25, { joint: 2, velocity: -0.4 });
  const msg = JSON.parse(raw);
  assert.equal(msg.type, "jog");
  assert.equal(msg.seq, 7);
  assert.equal(msg.ts, 1.25);
  assert.deepEqual(msg.payload, { joint: 2, velocity: -0.4 });
});

test("decodeServer accepts valid frames", () => {
  const msg = decodeServer(
    JSON.stringify({ type: "ok", seq: 3, ts: 0.1, payload: { reply_to: 1 } }),
  );
  assert.ok(msg);
  assert.equal(msg!.type, "ok");
});

test("decodeServer drops malformed json", () => {
  assert.equal(decodeServer("{nope"), null);
});

test("decodeServer drops unknown types and bad envelopes", () => {
  assert.equal(
    decodeServer(JSON.stringify({ type: "warp", seq: 1, ts: 0 })),
    null,
  );
  assert.equal(decodeServer(JSON.stringify({ type: "state", ts: 0 })), null);
  assert.equal(decodeServer(JSON.stringify([1, 2, 3])), null);
});

test("toStateFrame converts a full payload", () => {
  const pose = { position: [0, 0, 1], orientation: [1, 0, 0, 0] };
  const msg = decodeServer(
    JSON.stringify({
      type: "state",
      seq: 9,
      ts: 2.0,
      payload: {
        q: [0, 0, 0, 0, 0, 0],
        qdot: [0, 0, 0, 0, 0, 0],
        sim_time: 2.0,
        mode: "TELEOP",
        collided: false,
        recording: true,
        goal_set: false,
        features: new Array(16).fill(0),
        ee: pose,
        links: [pose, pose, pose, pose, pose, pose],
        capsules: [],
      },
    }),
  )!;
  const frame = toStateFrame(msg);
  assert.ok(frame);
  assert.equal(frame!.seq, 9);
  assert.equal(frame!.mode, "TELEOP");
  assert.equal(frame!.recording, true);
  assert.equal(frame!.links.length, 6);
});

test("toStateFrame rejects frames without kinematics", () => {
  const msg = decodeServer(
    JSON.stringify({ type: "state", seq: 1, ts: 0, payload: { q: [1, 2] } }),
  )!;
  assert.equal(toStateFrame(msg), null);
});

test("protocol version constant matches the service", () => {
  assert.equal(PROTOCOL_VERSION, 1);
});
