/**
 * End-to-end teleop round trip against the real service: connect, enter
 * TELEOP, jog while recording for 3 simulated seconds, stop, capture a goal.
 * Asserts the episode reply matches rate arithmetic and that no state frame
 * ever rendered out of order.
 */
import { test } from "node:test";
import assert from "node:assert/strict";
import { spawn, spawnSync, ChildProcess } from "node:child_process";
import { mkdtempSync, readdirSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import WebSocket from "ws";

import { TeleopClient, SocketLike } from "../src/client.js";

const PORT = 8906;
const PKG_ROOT = join(import.meta.dirname ?? __dirname, "..", "..");

function wsFactory(url: string): SocketLike {
  const ws = new WebSocket(url);
  const like: SocketLike = {
    send: (d) => ws.send(d),
    close: () => ws.close(),
    onmessage: null,
    onopen: null,
    onclose: null,
    onerror: null,
  };
  ws.on("open", () => like.onopen?.());
  ws.on("message", (data) => like.onmessage?.({ data: data.toString() }));
  ws.on("close", () => like.onclose?.());
  ws.on("error", (err) => like.onerror?.(err));
  return like;
}

function waitFor(pred: () => boolean, timeoutMs: number, label: string): Promise<void> {
  const t0 = Date.now();
  return new Promise((resolve, reject) => {
    const timer = setInterval(() => {
      if (pred()) {
        clearInterval(timer);
        resolve();
      } else if (Date.now() - t0 > timeoutMs) {
        clearInterval(timer);
        reject(new Error(`timeout waiting for ${label}`));
      }
    }, 20);
  });
}

test("teleop round trip produces a rate-consistent episode", { timeout: 120_000 }, async () => {
  const dataDir = mkdtempSync(join(tmpdir(), "cinearm-rt-"));
  let server: ChildProcess | null = null;
  try {
    server = spawn(
      "python3",
      ["-m", "cinearm.cli", "serve", "--port", String(PORT), "--seed", "0"],
      { env: { ...process.env, CINEARM_DATA_DIR: dataDir }, cwd: PKG_ROOT, stdio: "pipe" },
    );
    const serverOut: string[] = [];
    server.stdout?.on("data", (d) => serverOut.push(String(d)));
    server.stderr?.on("data", (d) => serverOut.push(String(d)));
    await waitFor(() => serverOut.join("").includes("serving"), 20_000, "server start");

    const client = new TeleopClient(`ws://127.0.0.1:${PORT}`, wsFactory);
    client.connect();
    await waitFor(() => client.connected, 10_000, "connection");
    await waitFor(() => client.state.latest !== null, 10_000, "first state frame");

    const modeReply = await client.setMode("TELEOP");
    assert.equal(modeReply.type, "ok");

    const startReply = await client.recordStart();
    assert.equal(startReply.type, "ok");
    const t0 = client.state.latest!.simTime;

    // jog joint 0 while recording; resend within the 30 Hz command budget
    const jogTimer = setInterval(() => client.jog(0, 0.3), 80);
    await waitFor(
      () => client.state.latest !== null && client.state.latest.simTime - t0 >= 3.0,
      60_000,
      "3 simulated seconds of recording",
    );
    clearInterval(jogTimer);

    const stopReply = await client.recordStop();
    assert.equal(stopReply.type, "ok", JSON.stringify(stopReply.payload));
    const payload = stopReply.payload as Record<string, number | string>;
    const recorded = (client.state.latest!.simTime - t0) as number;
    const jointSamples = payload.joint_samples as number;
    const featureSamples = payload.feature_samples as number;
    // rate arithmetic: 200 Hz joints, 30 Hz features over the recorded span
    assert.ok(Math.abs(jointSamples - recorded * 200) <= 0.02 * recorded * 200 + 2,
      `joint samples ${jointSamples} vs ${recorded * 200}`);
    assert.ok(Math.abs(featureSamples - recorded * 30) <= 0.02 * recorded * 30 + 2,
      `feature samples ${featureSamples} vs ${recorded * 30}`);

    const goalReply = await client.captureGoal();
    assert.equal(goalReply.type, "ok");
    assert.ok(client.state.goalPreview !== null);

    // ordering invariant: no stale frame was ever accepted for render
    assert.ok(client.state.latest!.seq > 0);
    const before = client.state.lastRenderedSeq;
    client.state.takeForRender();
    assert.ok(client.state.lastRenderedSeq >= before);

    client.disconnect();

    // the episode file on disk is loadable and its goal equals the final feature
    const files = readdirSync(dataDir).filter((f) => f.endsWith(".cep"));
    assert.equal(files.length, 1);
    const check = spawnSync("python3", ["-c", `
import sys, numpy as np
from cinearm.data import load_episode
ep = load_episode(sys.argv[1])
assert ep.provenance == "TELEOP"
assert np.array_equal(ep.goal, ep.features[-1])
print("episode ok", len(ep.joints), len(ep.features))
`, join(dataDir, files[0])], { cwd: PKG_ROOT });
    assert.equal(check.status, 0, String(check.stderr));
  } finally {
    server?.kill("SIGKILL");
  }
});
