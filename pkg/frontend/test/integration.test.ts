// End-to-end console checks against the real service: snapshot cadence,
// drag echo with the documented scaling, mode toggling, finalize-to-
// corrections, and message fuzzing.

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import WebSocket from "ws";

import { dragDelta, moveDrag, startDrag } from "../src/drag.js";
import { makeMessage, parseServer, type ServerMessage } from "../src/protocol.js";

const PORT = 8741;
const BASE = `http://127.0.0.1:${PORT}`;
const ALPHA = 0.05;

let server: ChildProcess;

class Client {
  sock!: WebSocket;
  inbox: ServerMessage[] = [];
  private waiters: ((msg: ServerMessage) => void)[] = [];

  async connect(): Promise<void> {
    this.sock = new WebSocket(`ws://127.0.0.1:${PORT}/session`);
    this.sock.on("message", (data) => {
      const msg = parseServer(String(data));
      if (!msg) return;
      this.inbox.push(msg);
      const waiter = this.waiters.shift();
      if (waiter) waiter(msg);
    });
    await new Promise<void>((resolve, reject) => {
      this.sock.once("open", () => resolve());
      this.sock.once("error", reject);
    });
  }

  send(type: Parameters<typeof makeMessage>[0], payload: Record<string, unknown> = {}): void {
    this.sock.send(makeMessage(type, payload));
  }

  sendRaw(raw: string): void {
    this.sock.send(raw);
  }

  next(timeoutMs = 10000): Promise<ServerMessage> {
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => reject(new Error("timeout waiting for message")), timeoutMs);
      this.waiters.push((msg) => {
        clearTimeout(timer);
        resolve(msg);
      });
    });
  }

  async nextOfType(type: ServerMessage["type"], timeoutMs = 20000): Promise<ServerMessage> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const msg = await this.next(Math.max(1, deadline - Date.now()));
      if (msg.type === type) return msg;
    }
  }

  close(): void {
    this.sock.close();
  }
}

beforeAll(async () => {
  const ws = mkdtempSync(join(tmpdir(), "wayforge-ui-"));
  server = spawn("python3", [join(__dirname, "fixture.py"), "--workspace", ws, "--port", String(PORT)], {
    stdio: ["ignore", "inherit", "inherit"],
  });
  const deadline = Date.now() + 90000;
  for (;;) {
    try {
      const res = await fetch(`${BASE}/tasks`);
      if (res.ok) break;
    } catch {
      /* not up yet */
    }
    if (Date.now() > deadline) throw new Error("service did not come up");
    await new Promise((r) => setTimeout(r, 500));
  }
});

afterAll(() => {
  server?.kill();
});

describe("B1: scripted session round trip", () => {
  it("connects, streams snapshots at >=10 Hz, echoes scaled drags, toggles teleop, finalizes into corrections", async () => {
    const client = new Client();
    await client.connect();
    client.send("start_replay", { episode_id: "failed-demo", alpha: ALPHA, beta: ALPHA });
    const started = await client.nextOfType("event");
    expect((started.payload as { event: string }).event).toBe("session_started");
    const sessionId = started.session_id as string;

    // snapshot cadence over ~1.5 s
    const t0 = Date.now();
    let count = 0;
    while (Date.now() - t0 < 1500) {
      const msg = await client.next();
      if (msg.type === "state_snapshot") count += 1;
    }
    const hz = count / ((Date.now() - t0) / 1000);
    expect(hz).toBeGreaterThanOrEqual(10);

    // a real drag through the console's own mapping: 100 px at 500 px/m
    let drag = startDrag(200, 300);
    drag = moveDrag(drag, 200, 375); // 75 px screen-down -> -0.15 m in y
    const raw = dragDelta(drag, 500);
    expect(raw[1]).toBeCloseTo(-0.15, 12);
    client.send("residual_delta", { arm: "right", delta: raw });
    const ev = await client.nextOfType("event");
    const applied = (ev.payload as { applied: number[] }).applied;
    for (let i = 0; i < 3; i++) {
      expect(Math.abs(applied[i] - ALPHA * raw[i])).toBeLessThan(1e-9);
    }

    // teleop toggle round trip (badge follows the server acknowledgement)
    client.send("set_mode", { mode: "full_teleop" });
    let mode = await client.nextOfType("event");
    expect((mode.payload as { mode: string }).mode).toBe("full_teleop");
    client.send("set_mode", { mode: "residual" });
    mode = await client.nextOfType("event");
    expect((mode.payload as { mode: string }).mode).toBe("residual");

    // cancel the z miscalibration, then let the operator stand-in complete
    for (let i = 0; i < 12; i++) {
      client.send("residual_delta", { arm: "right", delta: [0, 0, -0.06] });
      await client.nextOfType("event");
      client.send("residual_delta", { arm: "left", delta: [0, 0, -0.06] });
      await client.nextOfType("event");
    }
    client.send("finalize", { dataset: "ui-corrections", complete: true });
    const outcome = await client.nextOfType("outcome", 120000);
    const out = outcome.payload as {
      outcome: { success: boolean; reason?: string };
      corrections_added: number;
      log: string;
    };
    expect(out.outcome.success).toBe(true);
    expect(out.corrections_added).toBeGreaterThan(0);

    // server-logged applied_delta matches what the console displayed
    const sess = await (await fetch(`${BASE}/sessions/${out.log}`)).json() as {
      records: { type: string; applied?: number[]; raw?: number[] }[];
    };
    const corrections = sess.records.filter((r) => r.type === "correction");
    const logged = corrections.find((r) => Math.abs((r.raw?.[1] ?? 0) - raw[1]) < 1e-12);
    expect(logged).toBeDefined();
    for (let i = 0; i < 3; i++) {
      expect(Math.abs((logged!.applied?.[i] ?? NaN) - applied[i])).toBeLessThan(1e-12);
    }
    client.close();
  }, 180000);
});

describe("B2: schema conformance under fuzzing", () => {
  it("1000 fuzzed messages all get replies without disconnecting", async () => {
    const client = new Client();
    await client.connect();
    let disconnected = false;
    client.sock.on("close", () => {
      disconnected = true;
    });
    const fuzz = (i: number): string => {
      switch (i % 8) {
        case 0: return "";
        case 1: return "{broken";
        case 2: return JSON.stringify({ type: 42 });
        case 3: return JSON.stringify({ type: "residual_delta", payload: { arm: "up", delta: "x" } });
        case 4: return JSON.stringify({ type: `junk_${i}`, payload: {} });
        case 5: return JSON.stringify({ nonsense: true });
        case 6: return JSON.stringify({ type: "set_mode", payload: { mode: i } });
        default: return JSON.stringify({ type: "finalize", payload: { dataset: i } });
      }
    };
    let replies = 0;
    for (let i = 0; i < 1000; i++) {
      client.sendRaw(fuzz(i));
      const msg = await client.next();
      expect(msg.type).toBe("error");
      replies += 1;
    }
    expect(replies).toBe(1000);
    expect(disconnected).toBe(false);

    // the connection still works for real traffic afterwards
    client.send("start_replay", { episode_id: "failed-demo" });
    const started = await client.nextOfType("event");
    expect((started.payload as { event: string }).event).toBe("session_started");
    client.close();
  }, 120000);
});
