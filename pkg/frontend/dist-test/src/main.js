/**
 * Browser bootstrap: wires DOM controls to the TeleopClient and runs the
 * render loop off the latest-frame slot (decoupled from message arrival).
 */
import { TeleopClient } from "./client.js";
import { Renderer } from "./renderer.js";
function el(id) {
    const node = document.getElementById(id);
    if (!node)
        throw new Error(`missing element #${id}`);
    return node;
}
const params = new URLSearchParams(window.location.search);
const url = params.get("server") ?? "ws://127.0.0.1:8765";
const canvas = el("view");
const inset = el("camera-inset");
const statusEl = el("status");
const logEl = el("log");
const renderer = new Renderer(canvas, inset);
function log(line) {
    logEl.textContent = `${line}\n${logEl.textContent ?? ""}`.slice(0, 4000);
}
const client = new TeleopClient(url, (u) => new WebSocket(u), {
    onStatus: (s) => {
        statusEl.textContent = s;
        document.body.classList.toggle("connected", s === "connected");
    },
    onReply: (msg) => {
        if (msg.type === "error") {
            log(`error: ${msg.payload.message}`);
        }
        if (msg.type === "hello") {
            const scene = msg.payload.scene;
            if (scene) {
                renderer.setScene({
                    target: scene.target,
                    obstacle: scene.obstacle,
                    fiducials: scene.fiducials ?? [],
                });
            }
        }
    },
    onEvent: (msg) => log(`event: ${JSON.stringify(msg.payload)}`),
});
client.connect();
// --- jog controls: sliders send while held, zero on release ------------------
for (let j = 0; j < 6; j++) {
    const slider = el(`jog-${j}`);
    slider.addEventListener("input", () => {
        client.jog(j, parseFloat(slider.value));
    });
    const release = () => {
        slider.value = "0";
        client.jogStop(j);
    };
    slider.addEventListener("change", release);
    slider.addEventListener("pointerup", release);
}
// keyboard jog: q/a w/s e/d r/f t/g y/h for joints 1..6
const keyMap = {
    q: [0, 0.5], a: [0, -0.5], w: [1, 0.5], s: [1, -0.5], e: [2, 0.5], d: [2, -0.5],
    r: [3, 0.5], f: [3, -0.5], t: [4, 0.5], g: [4, -0.5], y: [5, 0.5], h: [5, -0.5],
};
const held = new Set();
window.addEventListener("keydown", (ev) => {
    const m = keyMap[ev.key];
    if (m && !held.has(ev.key)) {
        held.add(ev.key);
        client.jog(m[0], m[1]);
    }
});
window.addEventListener("keyup", (ev) => {
    const m = keyMap[ev.key];
    if (m) {
        held.delete(ev.key);
        client.jogStop(m[0]);
    }
});
// held keys re-send within the rate limit so the watchdog stays fed
setInterval(() => {
    for (const key of held) {
        const m = keyMap[key];
        if (m)
            client.jog(m[0], m[1]);
    }
}, 100);
// --- drag gizmo: pointer drag on the canvas moves the end effector ----------
let dragging = false;
let dragOrigin = null;
canvas.addEventListener("pointerdown", (ev) => {
    if (el("mode-drag").checked) {
        const frame = client.state.latest;
        if (!frame)
            return;
        dragging = true;
        dragOrigin = { x: ev.offsetX, y: ev.offsetY, ee: frame.ee.position };
    }
    else {
        dragging = true;
        dragOrigin = null; // orbit the view camera
    }
});
canvas.addEventListener("pointermove", (ev) => {
    if (!dragging)
        return;
    if (dragOrigin) {
        // screen-plane drag: x -> world y, y -> world z (scaled)
        const scale = 0.0022;
        const dx = (ev.offsetX - dragOrigin.x) * scale;
        const dy = (ev.offsetY - dragOrigin.y) * scale;
        client.drag([dragOrigin.ee[0], dragOrigin.ee[1] + dx, dragOrigin.ee[2] - dy]);
    }
    else {
        renderer.orbit(ev.movementX * 0.01, ev.movementY * 0.01);
    }
});
window.addEventListener("pointerup", () => {
    dragging = false;
    dragOrigin = null;
});
canvas.addEventListener("wheel", (ev) => {
    renderer.zoom(ev.deltaY > 0 ? 1.1 : 0.9);
    ev.preventDefault();
});
// --- buttons ------------------------------------------------------------------
el("btn-teleop").addEventListener("click", async () => {
    log(JSON.stringify((await client.setMode("TELEOP")).payload));
});
el("btn-idle").addEventListener("click", async () => {
    await client.setMode("IDLE");
});
el("btn-record").addEventListener("click", async function () {
    const recording = client.state.latest?.recording;
    const reply = recording ? await client.recordStop() : await client.recordStart();
    if (reply.type === "ok" && recording) {
        client.state.episodeCount += 1;
        log(`episode saved: ${JSON.stringify(reply.payload)}`);
    }
});
el("btn-goal").addEventListener("click", async () => {
    const reply = await client.captureGoal();
    log(reply.type === "ok" ? "goal captured" : `goal error`);
});
el("btn-rollout").addEventListener("click", async () => {
    const ckpt = el("checkpoint").value;
    log(JSON.stringify((await client.rolloutPolicy(ckpt)).payload));
});
el("btn-abort").addEventListener("click", async () => {
    await client.abort();
});
// --- render loop off the latest-frame slot -------------------------------------
function renderLoop() {
    const frame = client.state.takeForRender();
    if (frame) {
        renderer.draw(frame);
        el("rec-indicator").textContent = frame.recording ? "REC" : "";
    }
    requestAnimationFrame(renderLoop);
}
requestAnimationFrame(renderLoop);
