// Console wiring: episode browser, live scene, drag-to-correct input,
// mode/gripper controls. All world truth comes from server snapshots.

import { SessionConnection, fetchEpisode, listEpisodes } from "./connection.js";
import { PIXELS_PER_METER, dragDelta, dragMagnitude, moveDrag, startDrag, type DragState } from "./drag.js";
import { SceneRenderer, defaultTransform } from "./scene.js";

const base = location.origin.replace(/\/ui.*/, "");
const wsUrl = base.replace(/^http/, "ws") + "/session";

const canvas = document.getElementById("scene") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const renderer = new SceneRenderer(ctx, canvas.width, canvas.height);

const statusEl = document.getElementById("status")!;
const modeEl = document.getElementById("mode")!;
const tickEl = document.getElementById("tick")!;
const logEl = document.getElementById("log")!;
const episodesEl = document.getElementById("episodes") as HTMLSelectElement;
const armEl = document.getElementById("arm") as HTMLSelectElement;

function logLine(text: string): void {
  const div = document.createElement("div");
  div.textContent = text;
  logEl.prepend(div);
  while (logEl.childElementCount > 40) logEl.lastChild?.remove();
}

let paused = false;
let sessionActive = false;

const conn = new SessionConnection(wsUrl, {
  onStatus: (s) => {
    statusEl.textContent = s;
    statusEl.className = s;
  },
  onSnapshot: () => {
    /* render loop pulls the latest snapshot */
  },
  onEvent: (msg) => {
    const p = msg.payload as Record<string, unknown>;
    if (p.event === "mode") modeEl.textContent = String(p.mode);
    if (p.event === "correction") {
      const applied = (p.applied as number[]).map((v) => v.toFixed(4)).join(", ");
      logLine(`applied_delta [${applied}] (${String(p.mode)})`);
    } else if (p.event === "paused") paused = true;
    else if (p.event === "resumed") paused = false;
    else if (p.event === "session_started") {
      sessionActive = true;
      renderer.reset();
      logLine("session started");
    } else logLine(`event: ${JSON.stringify(p)}`);
  },
  onOutcome: (msg) => {
    sessionActive = false;
    const p = msg.payload as { outcome?: { success?: boolean; reason?: string }; corrections_added?: number };
    logLine(`outcome: ${p.outcome?.success ? "SUCCESS" : `FAILURE (${p.outcome?.reason})`}`
      + (p.corrections_added ? `; +${p.corrections_added} corrections` : ""));
  },
  onError: (msg) => logLine(`error: ${JSON.stringify(msg.payload)}`),
});
conn.connect();

async function refreshEpisodes(): Promise<void> {
  try {
    const ids = await listEpisodes(base);
    episodesEl.innerHTML = "";
    for (const id of ids) {
      const opt = document.createElement("option");
      opt.value = id;
      opt.textContent = id;
      episodesEl.appendChild(opt);
    }
  } catch {
    /* retried on next open */
  }
}
void refreshEpisodes();

document.getElementById("start")!.addEventListener("click", () => {
  const id = episodesEl.value;
  if (!id) return;
  conn.send("start_replay", { episode_id: id, allow_success: true });
  void fetchEpisode(base, id).then((ep) => {
    // recorded command stream as the planned-path overlay
    for (const arm of ["left", "right"]) {
      renderer.planned[arm] = ep.records
        .filter((r) => r.type === "arm" && r.arm === arm)
        .map((r) => {
          const target = r.target as { p: number[] };
          return [target.p[0], target.p[1]] as [number, number];
        });
    }
  });
});
document.getElementById("pause")!.addEventListener("click", () => conn.send("pause"));
document.getElementById("resume")!.addEventListener("click", () => conn.send("resume"));
document.getElementById("teleop")!.addEventListener("click", () => {
  const next = modeEl.textContent === "full_teleop" ? "residual" : "full_teleop";
  conn.send("set_mode", { mode: next });
});
document.getElementById("grasp")!.addEventListener("click", () => conn.send("grasp", { arm: armEl.value }));
document.getElementById("release")!.addEventListener("click", () => conn.send("release", { arm: armEl.value }));
document.getElementById("finalize")!.addEventListener("click", () => conn.send("finalize", { dataset: "corrections" }));

// drag input: pointer deltas in scene pixels become wrist deltas
let drag: DragState | null = null;
canvas.addEventListener("pointerdown", (ev) => {
  drag = startDrag(ev.offsetX, ev.offsetY, ev.shiftKey);
});
canvas.addEventListener("pointermove", (ev) => {
  if (drag) drag = moveDrag(drag, ev.offsetX, ev.offsetY);
});
canvas.addEventListener("pointerup", () => {
  if (!drag || !sessionActive || paused) {
    drag = null;
    return;
  }
  if (dragMagnitude(drag) > 0) {
    const t = defaultTransform(canvas.width, canvas.height);
    const delta = dragDelta(drag, t.pixelsPerMeter || PIXELS_PER_METER);
    conn.send("residual_delta", { arm: armEl.value, delta });
  }
  drag = null;
});

function frame(): void {
  const snap = conn.latestSnapshot;
  if (snap) {
    renderer.render(snap);
    tickEl.textContent = `tick ${snap.tick} (${snap.time.toFixed(2)}s)`;
    modeEl.textContent = snap.mode;
  }
  requestAnimationFrame(frame);
}
requestAnimationFrame(frame);
