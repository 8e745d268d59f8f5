// Top-down 2-D workspace rendering. Poses come straight from server
// snapshots (no client-side physics); heights show as numeric labels.
// Trajectories are color-coded per arm: yellow left, green right.

import type { Snapshot } from "./protocol.js";

export const ARM_COLORS: Record<string, string> = { left: "#e0c341", right: "#3fbf6f" };

const CLASS_COLORS: Record<string, string> = {
  bottle: "#4f86c6",
  can: "#c65353",
  hammer: "#8a6d3b",
  target_cylinder: "#d07be0",
  basket: "#777777",
  tray: "#a8926a",
  marker: "#e06666",
  cup: "#56b4ad",
};

export interface SceneTransform {
  pixelsPerMeter: number;
  originX: number; // canvas px of workspace (0, 0)
  originY: number;
}

export function defaultTransform(width: number, height: number): SceneTransform {
  // workspace x in [0, 1.0], y in [-0.6, 0.6]; +y points up the screen
  const ppm = Math.min(width / 1.1, height / 1.3);
  return { pixelsPerMeter: ppm, originX: 0.05 * ppm, originY: height / 2 };
}

export function toScreen(t: SceneTransform, x: number, y: number): [number, number] {
  return [t.originX + x * t.pixelsPerMeter, t.originY - y * t.pixelsPerMeter];
}

export interface Trail {
  points: [number, number][]; // workspace x,y per arm sample
  limit: number;
}

export function pushTrail(trail: Trail, x: number, y: number): void {
  trail.points.push([x, y]);
  if (trail.points.length > trail.limit) trail.points.shift();
}

export class SceneRenderer {
  private trails: Record<string, Trail> = {
    left: { points: [], limit: 400 },
    right: { points: [], limit: 400 },
  };
  planned: Record<string, [number, number][]> = { left: [], right: [] };

  constructor(
    private ctx: CanvasRenderingContext2D,
    private width: number,
    private height: number,
  ) {}

  reset(): void {
    this.trails.left.points = [];
    this.trails.right.points = [];
    this.planned = { left: [], right: [] };
  }

  render(snap: Snapshot): void {
    const ctx = this.ctx;
    const t = defaultTransform(this.width, this.height);
    ctx.clearRect(0, 0, this.width, this.height);

    // table bounds
    ctx.strokeStyle = "#555";
    ctx.lineWidth = 1.5;
    const [x0, y0] = toScreen(t, 0, 0.6);
    const [x1, y1] = toScreen(t, 1.0, -0.6);
    ctx.strokeRect(x0, y0, x1 - x0, y1 - y0);

    // planned (recorded) paths, then executed trails
    for (const arm of ["left", "right"]) {
      this.polyline(ctx, t, this.planned[arm] ?? [], ARM_COLORS[arm], 0.35, [4, 4]);
      this.polyline(ctx, t, this.trails[arm].points, ARM_COLORS[arm], 0.9);
    }

    // objects
    for (const [oid, obj] of Object.entries(snap.objects)) {
      const [cx, cy] = toScreen(t, obj.pose.p[0], obj.pose.p[1]);
      const r = Math.max(3, obj.radius * t.pixelsPerMeter);
      ctx.beginPath();
      ctx.arc(cx, cy, r, 0, 2 * Math.PI);
      ctx.fillStyle = CLASS_COLORS[obj.cls] ?? "#999";
      ctx.globalAlpha = obj.held_by ? 0.55 : 0.9;
      ctx.fill();
      ctx.globalAlpha = 1;
      ctx.fillStyle = "#ddd";
      ctx.font = "10px sans-serif";
      ctx.fillText(`${oid} z=${obj.pose.p[2].toFixed(2)}`, cx + r + 2, cy - 2);
    }

    // end effectors
    for (const [arm, st] of Object.entries(snap.arms)) {
      const [ex, ey] = toScreen(t, st.ee.p[0], st.ee.p[1]);
      pushTrail(this.trails[arm], st.ee.p[0], st.ee.p[1]);
      ctx.strokeStyle = ARM_COLORS[arm] ?? "#fff";
      ctx.lineWidth = 2;
      ctx.beginPath();
      ctx.moveTo(ex - 7, ey);
      ctx.lineTo(ex + 7, ey);
      ctx.moveTo(ex, ey - 7);
      ctx.lineTo(ex, ey + 7);
      ctx.stroke();
      if (st.gripper === "closed") {
        ctx.beginPath();
        ctx.arc(ex, ey, 9, 0, 2 * Math.PI);
        ctx.stroke();
      }
      ctx.fillStyle = ARM_COLORS[arm] ?? "#fff";
      ctx.font = "11px sans-serif";
      ctx.fillText(`${arm} z=${st.ee.p[2].toFixed(3)}`, ex + 10, ey + 12);
    }
  }

  private polyline(
    ctx: CanvasRenderingContext2D,
    t: SceneTransform,
    pts: [number, number][],
    color: string,
    alpha: number,
    dash: number[] = [],
  ): void {
    if (pts.length < 2) return;
    ctx.save();
    ctx.globalAlpha = alpha;
    ctx.strokeStyle = color;
    ctx.setLineDash(dash);
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    const [sx, sy] = toScreen(t, pts[0][0], pts[0][1]);
    ctx.moveTo(sx, sy);
    for (const [x, y] of pts.slice(1)) {
      const [px, py] = toScreen(t, x, y);
      ctx.lineTo(px, py);
    }
    ctx.stroke();
    ctx.restore();
  }
}
