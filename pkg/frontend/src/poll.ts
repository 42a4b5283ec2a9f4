import { ApiClient, AuthExpired } from "./api.js";
import type { Store } from "./state.js";

/**
 * Live occupancy poll, one request per cadence tick. Only live mode polls;
 * a historical window freezes the panel at its last values.
 */
export class OccupancyPoller {
  static readonly INTERVAL_MS = 2000;

  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly store: Store,
    private readonly intervalMs: number = OccupancyPoller.INTERVAL_MS,
  ) {}

  start(): void {
    if (this.timer !== null) return;
    this.timer = setInterval(() => void this.tick(), this.intervalMs);
    void this.tick();
  }

  stop(): void {
    if (this.timer !== null) clearInterval(this.timer);
    this.timer = null;
  }

  async tick(): Promise<void> {
    const s = this.store.state;
    if (s.window.mode !== "live" || !s.panels.occupancy || s.authExpired) return;
    try {
      const data = await this.api.occupancy(s.camera);
      this.store.dispatch({ kind: "occupancy-ok", data, at: Date.now() });
    } catch (err) {
      if (err instanceof AuthExpired) {
        this.store.dispatch({ kind: "auth-expired" });
        this.stop();
        return;
      }
      // NoData (camera gone quiet) and unreachable both leave the last
      // values on screen behind the stale badge
      this.store.dispatch({ kind: "occupancy-miss" });
    }
  }
}
