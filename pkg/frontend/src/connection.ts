// WebSocket session binding with auto-retry and a latest-only snapshot
// buffer, plus the read-only HTTP browsing endpoints.

import { makeMessage, parseServer, type ClientMessage, type ServerMessage, type Snapshot, snapshotPayload } from "./protocol.js";

export interface ConnectionHooks {
  onSnapshot?: (snap: Snapshot) => void;
  onEvent?: (msg: ServerMessage) => void;
  onOutcome?: (msg: ServerMessage) => void;
  onError?: (msg: ServerMessage) => void;
  onStatus?: (status: "connecting" | "connected" | "disconnected") => void;
}

export class SessionConnection {
  private sock: WebSocket | null = null;
  private retryMs = 500;
  private closed = false;
  latestSnapshot: Snapshot | null = null;
  snapshotCount = 0;

  constructor(
    readonly url: string,
    readonly hooks: ConnectionHooks = {},
  ) {}

  connect(): void {
    this.closed = false;
    this.hooks.onStatus?.("connecting");
    const sock = new WebSocket(this.url);
    this.sock = sock;
    sock.onopen = () => {
      this.retryMs = 500;
      this.hooks.onStatus?.("connected");
    };
    sock.onmessage = (ev: MessageEvent) => this.dispatch(String(ev.data));
    sock.onclose = () => {
      this.hooks.onStatus?.("disconnected");
      if (!this.closed) {
        setTimeout(() => this.connect(), this.retryMs);
        this.retryMs = Math.min(this.retryMs * 2, 8000);
      }
    };
    sock.onerror = () => {
      // onclose handles the retry
    };
  }

  close(): void {
    this.closed = true;
    this.sock?.close();
  }

  private dispatch(raw: string): void {
    const msg = parseServer(raw);
    if (!msg) return;
    if (msg.type === "state_snapshot") {
      const parsed = snapshotPayload.safeParse(msg.payload);
      if (parsed.success) {
        this.latestSnapshot = parsed.data; // latest-only buffer
        this.snapshotCount += 1;
        this.hooks.onSnapshot?.(parsed.data);
      }
    } else if (msg.type === "event") {
      this.hooks.onEvent?.(msg);
    } else if (msg.type === "outcome") {
      this.hooks.onOutcome?.(msg);
    } else {
      this.hooks.onError?.(msg);
    }
  }

  send(type: ClientMessage["type"], payload: Record<string, unknown> = {}): boolean {
    if (!this.sock || this.sock.readyState !== WebSocket.OPEN) return false;
    this.sock.send(makeMessage(type, payload));
    return true;
  }
}

export async function listEpisodes(base: string): Promise<string[]> {
  const res = await fetch(`${base}/episodes`);
  const data = (await res.json()) as { episodes: string[] };
  return data.episodes;
}

export async function listTasks(base: string): Promise<string[]> {
  const res = await fetch(`${base}/tasks`);
  const data = (await res.json()) as { tasks: { id: string }[] };
  return data.tasks.map((t) => t.id);
}

export async function fetchEpisode(base: string, id: string): Promise<{
  header: Record<string, unknown>;
  records: Record<string, unknown>[];
}> {
  const res = await fetch(`${base}/episodes/${id}`);
  if (!res.ok) throw new Error(`episode ${id}: ${res.status}`);
  return (await res.json()) as { header: Record<string, unknown>; records: Record<string, unknown>[] };
}
