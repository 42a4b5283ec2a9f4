import type { AlertWire, ChannelStatus } from "./types.js";

/**
 * Live alert subscription over the cloud's SSE endpoint.
 *
 * Implemented on fetch rather than EventSource: the stream route wants a
 * Bearer token and EventSource cannot send headers. Reconnection passes the
 * last seen event id back as Last-Event-Id, so the server replays exactly
 * what was missed and nothing twice (feed dedup catches the overlap anyway).
 */

export interface SseReader {
  read(): Promise<{ done: boolean; value?: Uint8Array }>;
  cancel(): void | Promise<void>;
}

export type SseFetch = (url: string, init: {
  headers: Record<string, string>;
}) => Promise<{
  ok: boolean;
  status: number;
  body: { getReader(): SseReader } | null;
}>;

export interface AlertStreamOptions {
  baseUrl: string;
  token: string;
  site?: string;
  onAlert: (alert: AlertWire) => void;
  onStatus?: (status: ChannelStatus) => void;
  onAuthExpired?: () => void;
  fetchFn?: SseFetch;
  lastEventId?: string;
  backoffBaseMs?: number;
  backoffCapMs?: number;
}

interface SseFrame {
  id: string | null;
  data: string;
}

/** Split one double-newline-terminated SSE frame into id/data. */
export function parseFrame(raw: string): SseFrame {
  let id: string | null = null;
  const data: string[] = [];
  for (const line of raw.split("\n")) {
    if (line.startsWith(":")) continue; // comment / keepalive
    const sep = line.indexOf(":");
    if (sep < 0) continue;
    const field = line.slice(0, sep);
    let value = line.slice(sep + 1);
    if (value.startsWith(" ")) value = value.slice(1);
    if (field === "id") id = value;
    else if (field === "data") data.push(value);
  }
  return { id, data: data.join("\n") };
}

export class AlertStream {
  private stopped = false;
  private lastId: string | null;
  private reader: SseReader | null = null;
  private readonly opts: AlertStreamOptions;

  constructor(opts: AlertStreamOptions) {
    this.opts = opts;
    this.lastId = opts.lastEventId ?? null;
  }

  get lastEventId(): string | null {
    return this.lastId;
  }

  start(): void {
    void this.run();
  }

  stop(): void {
    this.stopped = true;
    void this.reader?.cancel();
  }

  private status(s: ChannelStatus): void {
    this.opts.onStatus?.(s);
  }

  private async run(): Promise<void> {
    const base = this.opts.backoffBaseMs ?? 500;
    const cap = this.opts.backoffCapMs ?? 15000;
    let attempt = 0;
    const fetchFn: SseFetch = this.opts.fetchFn ?? ((u, i) => fetch(u, i));
    while (!this.stopped) {
      this.status("connecting");
      try {
        const q = new URLSearchParams();
        if (this.opts.site) q.set("site", this.opts.site);
        const headers: Record<string, string> = {
          Authorization: `Bearer ${this.opts.token}`,
          Accept: "text/event-stream",
        };
        if (this.lastId !== null) headers["Last-Event-Id"] = this.lastId;
        const res = await fetchFn(
          `${this.opts.baseUrl}/v1/alerts/stream?${q.toString()}`,
          { headers },
        );
        if (res.status === 401) {
          this.status("down");
          this.opts.onAuthExpired?.();
          return; // retrying a dead token cannot help
        }
        if (!res.ok || res.body === null) throw new Error(`stream http ${res.status}`);
        this.reader = res.body.getReader();
        this.status("live");
        attempt = 0;
        await this.consume(this.reader);
      } catch {
        // drop through to the backoff below
      }
      this.reader = null;
      if (this.stopped) return;
      this.status("down");
      const delay = Math.min(cap, base * 2 ** attempt);
      attempt += 1;
      await new Promise((r) => setTimeout(r, delay));
    }
  }

  private async consume(reader: SseReader): Promise<void> {
    const decoder = new TextDecoder();
    let buffer = "";
    for (;;) {
      const { done, value } = await reader.read();
      if (done) return;
      buffer += decoder.decode(value, { stream: true });
      let at: number;
      while ((at = buffer.indexOf("\n\n")) >= 0) {
        const frame = parseFrame(buffer.slice(0, at));
        buffer = buffer.slice(at + 2);
        if (!frame.data) continue; // keepalive
        const alert = JSON.parse(frame.data) as AlertWire;
        // id line first so a crash mid-delivery resumes on the same alert
        this.opts.onAlert(alert);
        this.lastId = frame.id ?? alert.alert_id;
      }
    }
  }
}
