import type { SseFetch, SseReader } from "../src/alerts.js";
import type { AlertWire, HeatmapWire, OccupancyWire, RecordWire } from "../src/types.js";

export function occ(count: number, over: Partial<OccupancyWire> = {}): OccupancyWire {
  return {
    cam: "c01",
    t: 1723800000000,
    count,
    cum_today: count * 3,
    site_cum: count * 5,
    ratio: 1.0,
    level: "normal",
    ...over,
  };
}

export function grid(counts: number[][], over: Partial<HeatmapWire> = {}): HeatmapWire {
  return {
    site: "s1",
    from: 1723800000000,
    to: 1723886400000,
    cell_m: 2.0,
    origin: [0, 0],
    shape: [counts.length, counts[0]?.length ?? 0],
    counts,
    overflow: 0,
    ...over,
  };
}

export function alertWire(n: number, over: Partial<AlertWire> = {}): AlertWire {
  return {
    alert_id: `s1-${String(n).padStart(8, "0")}`,
    rule: "object",
    cam: "c01",
    t: 1723800000000 + n * 1000,
    severity: "critical",
    score: 1.0,
    gids: [n],
    detail: "watchlist object: gun",
    ...over,
  };
}

export function rec(gid: number, over: Partial<RecordWire> = {}): RecordWire {
  return {
    gid,
    cam: "c01",
    t: 1723800000000 + gid * 1000,
    bbox: [100 + gid * 10, 200, 40, 120],
    anomaly: 0.125,
    action: "walking",
    ...over,
  };
}

type Pending = (r: { done: boolean; value?: Uint8Array }) => void;

class Conn implements SseReader {
  private chunks: Uint8Array[] = [];
  private pending: Pending | null = null;
  private done = false;

  push(text: string): void {
    const bytes = new TextEncoder().encode(text);
    if (this.pending !== null) {
      const p = this.pending;
      this.pending = null;
      p({ done: false, value: bytes });
      return;
    }
    this.chunks.push(bytes);
  }

  end(): void {
    this.done = true;
    if (this.pending !== null) {
      const p = this.pending;
      this.pending = null;
      p({ done: true });
    }
  }

  async read(): Promise<{ done: boolean; value?: Uint8Array }> {
    const next = this.chunks.shift();
    if (next !== undefined) return { done: false, value: next };
    if (this.done) return { done: true };
    return new Promise((resolve) => {
      this.pending = resolve;
    });
  }

  cancel(): void {
    this.end();
  }
}

/**
 * Behaves like the cloud SSE route: without Last-Event-Id the cursor starts
 * at the current max id (no replay); with it, everything strictly after is
 * replayed in id order, then live emits follow.
 */
export class FakeAlertServer {
  alerts: AlertWire[] = [];
  requests: Array<{ url: string; headers: Record<string, string> }> = [];
  private conns: Conn[] = [];
  rejectWith401 = false;

  readonly fetchFn: SseFetch = async (url, init) => {
    this.requests.push({ url, headers: init.headers });
    if (this.rejectWith401) {
      return { ok: false, status: 401, body: null };
    }
    const last = init.headers["Last-Event-Id"] ?? this.maxId();
    const conn = new Conn();
    for (const a of this.alerts) {
      if (a.alert_id > last) conn.push(frame(a));
    }
    this.conns.push(conn);
    return { ok: true, status: 200, body: { getReader: () => conn } };
  };

  emit(alert: AlertWire): void {
    this.alerts.push(alert);
    for (const conn of this.conns) conn.push(frame(alert));
  }

  keepalive(): void {
    for (const conn of this.conns) conn.push(": keepalive\n\n");
  }

  dropConnections(): void {
    for (const conn of this.conns) conn.end();
    this.conns = [];
  }

  maxId(): string {
    const last = this.alerts[this.alerts.length - 1];
    return last === undefined ? "" : last.alert_id;
  }
}

function frame(alert: AlertWire): string {
  return `id: ${alert.alert_id}\ndata: ${JSON.stringify(alert)}\n\n`;
}
