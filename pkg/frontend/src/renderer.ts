/**
 * Canvas renderer: perspective-projected line-and-capsule arm view plus a
 * camera inset showing the synthetic framing (subject centroid marker and
 * the central-50% retention box). All kinematics come from server frames;
 * the client never runs forward kinematics of its own.
 */

import { CapsuleWire, StateFrame } from "./protocol.js";

export interface SceneGeometry {
  target: { position: number[]; radius: number };
  obstacle: { center: number[]; extents: number[]; present: boolean };
  fiducials: number[][];
}

interface ViewCamera {
  yaw: number;
  pitch: number;
  distance: number;
  center: [number, number, number];
}

export class Renderer {
  private view: ViewCamera = {
    yaw: -2.3,
    pitch: 0.45,
    distance: 2.2,
    center: [0.3, 0, 0.25],
  };

  constructor(
    private readonly canvas: HTMLCanvasElement,
    private readonly inset: HTMLCanvasElement,
    private scene: SceneGeometry | null = null,
  ) {}

  setScene(scene: SceneGeometry): void {
    this.scene = scene;
  }

  orbit(dYaw: number, dPitch: number): void {
    this.view.yaw += dYaw;
    this.view.pitch = Math.max(-1.4, Math.min(1.4, this.view.pitch + dPitch));
  }

  zoom(factor: number): void {
    this.view.distance = Math.max(0.6, Math.min(6, this.view.distance * factor));
  }

  /** World point -> [x_px, y_px, depth] in canvas coordinates. */
  project(p: [number, number, number]): [number, number, number] {
    const { yaw, pitch, distance, center } = this.view;
    const cy = Math.cos(yaw), sy = Math.sin(yaw);
    const cp = Math.cos(pitch), sp = Math.sin(pitch);
    const x = p[0] - center[0], y = p[1] - center[1], z = p[2] - center[2];
    // rotate into the view frame: yaw about world z, pitch about view x
    const vx = cy * x + sy * y;
    const vy = -sy * x + cy * y;
    const vz2 = cp * z - sp * vx;
    const vx2 = sp * z + cp * vx;
    const depth = distance - vx2;
    const f = (0.9 * this.canvas.height) / Math.max(depth, 0.05);
    return [
      this.canvas.width / 2 + f * vy,
      this.canvas.height / 2 - f * vz2,
      depth,
    ];
  }

  draw(frame: StateFrame): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const { width, height } = this.canvas;
    ctx.clearRect(0, 0, width, height);
    ctx.fillStyle = frame.collided ? "#3a1111" : "#10141c";
    ctx.fillRect(0, 0, width, height);

    this.drawFloorGrid(ctx);
    if (this.scene) this.drawScene(ctx, this.scene);
    this.drawArm(ctx, frame);
    this.drawHud(ctx, frame);
    this.drawInset(frame);
  }

  private drawFloorGrid(ctx: CanvasRenderingContext2D): void {
    ctx.strokeStyle = "#223";
    ctx.lineWidth = 1;
    for (let i = -5; i <= 10; i++) {
      this.polyline(ctx, [
        [i * 0.1, -0.6, 0],
        [i * 0.1, 0.6, 0],
      ]);
      this.polyline(ctx, [
        [-0.5, i * 0.1, 0],
        [1.0, i * 0.1, 0],
      ]);
    }
  }

  private drawScene(ctx: CanvasRenderingContext2D, scene: SceneGeometry): void {
    // target: circle at its projected position
    const t = scene.target.position as [number, number, number];
    const [tx, ty, td] = this.project(t);
    ctx.fillStyle = "#d7a13c";
    ctx.beginPath();
    ctx.arc(tx, ty, Math.max(3, (scene.target.radius * 500) / td), 0, 2 * Math.PI);
    ctx.fill();

    if (scene.obstacle.present) {
      ctx.strokeStyle = "#a04040";
      ctx.lineWidth = 1.5;
      const c = scene.obstacle.center;
      const h = scene.obstacle.extents.map((e) => e / 2);
      const corners: [number, number, number][] = [];
      for (const sx of [-1, 1])
        for (const sy of [-1, 1])
          for (const sz of [-1, 1])
            corners.push([c[0] + sx * h[0], c[1] + sy * h[1], c[2] + sz * h[2]]);
      const edges = [
        [0, 1], [0, 2], [0, 4], [1, 3], [1, 5], [2, 3],
        [2, 6], [3, 7], [4, 5], [4, 6], [5, 7], [6, 7],
      ];
      for (const [a, b] of edges) this.polyline(ctx, [corners[a], corners[b]]);
    }

    ctx.fillStyle = "#4f6f4f";
    for (const f of scene.fiducials) {
      const [x, y] = this.project(f as [number, number, number]);
      ctx.fillRect(x - 2, y - 2, 4, 4);
    }
  }

  private drawArm(ctx: CanvasRenderingContext2D, frame: StateFrame): void {
    // capsules as thick strokes whose width tracks projected radius
    for (const cap of frame.capsules) {
      this.drawCapsule(ctx, cap, frame.collided ? "#e06060" : "#7fa8d0");
    }
    // joint chain dots
    ctx.fillStyle = "#cfd8e6";
    const base: [number, number, number] = [0, 0, 0];
    const pts = [base, ...frame.links.map((l) => l.position)];
    for (const p of pts) {
      const [x, y] = this.project(p);
      ctx.beginPath();
      ctx.arc(x, y, 3, 0, 2 * Math.PI);
      ctx.fill();
    }
    // camera frustum hint at the end effector
    const ee = frame.ee;
    const [ex, ey] = this.project(ee.position);
    ctx.strokeStyle = "#e8e2c8";
    ctx.strokeRect(ex - 5, ey - 4, 10, 8);
  }

  private drawCapsule(ctx: CanvasRenderingContext2D, cap: CapsuleWire, color: string): void {
    const [x0, y0, d0] = this.project(cap.p0);
    const [x1, y1, d1] = this.project(cap.p1);
    const w = Math.max(2, (cap.radius * 2 * 0.9 * this.canvas.height) / Math.max((d0 + d1) / 2, 0.05));
    ctx.strokeStyle = color;
    ctx.lineWidth = w;
    ctx.lineCap = "round";
    ctx.beginPath();
    ctx.moveTo(x0, y0);
    ctx.lineTo(x1, y1);
    ctx.stroke();
    ctx.lineWidth = 1;
  }

  private drawHud(ctx: CanvasRenderingContext2D, frame: StateFrame): void {
    ctx.fillStyle = frame.collided ? "#ff8080" : "#9ab";
    ctx.font = "12px monospace";
    ctx.fillText(
      `${frame.mode}${frame.recording ? " REC" : ""}${frame.collided ? " COLLIDED" : ""}` +
        `  t=${frame.simTime.toFixed(1)}s  goal=${frame.goalSet ? "set" : "none"}`,
      8,
      16,
    );
  }

  private drawInset(frame: StateFrame): void {
    const ctx = this.inset.getContext("2d");
    if (!ctx) return;
    const { width, height } = this.inset;
    ctx.clearRect(0, 0, width, height);
    ctx.fillStyle = "#060a10";
    ctx.fillRect(0, 0, width, height);
    // central-50% retention box
    ctx.strokeStyle = "#3c5a3c";
    ctx.strokeRect(width * 0.25, height * 0.25, width * 0.5, height * 0.5);
    // frame border + crosshair
    ctx.strokeStyle = "#334";
    ctx.strokeRect(0.5, 0.5, width - 1, height - 1);
    ctx.beginPath();
    ctx.moveTo(width / 2 - 5, height / 2);
    ctx.lineTo(width / 2 + 5, height / 2);
    ctx.moveTo(width / 2, height / 2 - 5);
    ctx.lineTo(width / 2, height / 2 + 5);
    ctx.stroke();
    const f = frame.features;
    if (f.length >= 16 && f[4] === 1) {
      // subject centroid marker; u,v normalized to [-1, 1] across the frame
      const x = ((f[0] + 1) / 2) * width;
      const y = ((f[1] + 1) / 2) * height;
      const r = Math.max(2, Math.abs(f[3]) * width * 0.5);
      ctx.strokeStyle = "#d7a13c";
      ctx.beginPath();
      ctx.arc(x, y, r, 0, 2 * Math.PI);
      ctx.stroke();
      ctx.fillStyle = "#d7a13c";
      ctx.fillRect(x - 1.5, y - 1.5, 3, 3);
    } else {
      ctx.fillStyle = "#555";
      ctx.fillText?.("subject not visible", 8, height - 8);
    }
  }

  private polyline(ctx: CanvasRenderingContext2D, pts: [number, number, number][]): void {
    ctx.beginPath();
    pts.forEach((p, i) => {
      const [x, y] = this.project(p);
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    });
    ctx.stroke();
  }
}
