import { afterEach, describe, expect, it, vi } from "vitest";

import type { FetchLike } from "../src/api.js";
import { ApiClient } from "../src/api.js";
import { AlertStream } from "../src/alerts.js";
import { OccupancyPoller } from "../src/poll.js";
import { renderAlerts, renderHeatmap, renderOccupancy } from "../src/panels.js";
import { initialState, Store } from "../src/state.js";
import type { OccupancyWire } from "../src/types.js";
import { alertWire, FakeAlertServer, grid, occ } from "./helpers.js";

/**
 * The dashboard-fidelity gate: a headless client runs against fixture
 * streams and every number it displays must equal the API payload value,
 * alerts must hit the feed inside a second, and a reconnect must replay
 * exactly what was missed.
 */

function harness() {
  const store = new Store(initialState("s1", "c01"));
  const occupancyPane = document.createElement("div");
  const heatmapPane = document.createElement("div");
  const alertsPane = document.createElement("div");
  store.subscribe((s) => {
    renderOccupancy(occupancyPane, s);
    renderHeatmap(heatmapPane, s);
    renderAlerts(alertsPane, s, store.dispatch);
  });
  return { store, occupancyPane, heatmapPane, alertsPane };
}

const text = (root: HTMLElement, sel: string) => root.querySelector(sel)?.textContent;

afterEach(() => {
  vi.useRealTimers();
});

describe("occupancy fidelity", () => {
  // a morning-to-evening fixture: counts ramp up, peak, fall back
  const day: OccupancyWire[] = [
    occ(0, { t: 1723791600000, ratio: 0.0, level: "low", cum_today: 0, site_cum: 0 }),
    occ(2, { t: 1723795200000, ratio: 0.4, level: "low", cum_today: 2, site_cum: 3 }),
    occ(5, { t: 1723798800000, ratio: 1.0, level: "normal", cum_today: 9, site_cum: 14 }),
    occ(11, { t: 1723802400000, ratio: 2.2, level: "high", cum_today: 23, site_cum: 31 }),
    occ(8, { t: 1723806000000, ratio: 1.6, level: "high", cum_today: 30, site_cum: 44 }),
    occ(3, { t: 1723809600000, ratio: 0.6, level: "normal", cum_today: 33, site_cum: 49 }),
  ];

  it("every poll displays exactly the payload values on the 2 s cadence", async () => {
    vi.useFakeTimers();
    let polls = 0;
    const fetchFn: FetchLike = async () => ({
      ok: true,
      status: 200,
      json: async () => day[Math.min(polls++, day.length - 1)]!,
    });
    const { store, occupancyPane } = harness();
    const poller = new OccupancyPoller(new ApiClient("http://cloud:1", "t", fetchFn), store);
    poller.start();

    for (let k = 0; k < day.length; k++) {
      if (k > 0) await vi.advanceTimersByTimeAsync(OccupancyPoller.INTERVAL_MS);
      else await vi.advanceTimersByTimeAsync(1); // the immediate first tick
      const payload = day[k]!;
      expect(text(occupancyPane, ".occ-count")).toBe(String(payload.count));
      expect(text(occupancyPane, ".occ-ratio")).toBe(String(payload.ratio));
      expect(text(occupancyPane, ".occ-level")).toBe(payload.level);
      expect(text(occupancyPane, ".occ-today")).toBe(String(payload.cum_today));
      expect(text(occupancyPane, ".occ-site-today")).toBe(String(payload.site_cum));
      expect(occupancyPane.querySelector(".badge-stale")).toBeNull();
    }
    expect(polls).toBe(day.length); // one request per tick, nothing extra
    poller.stop();
  });
});

describe("heat map fidelity", () => {
  it("hovering any cell reads back the exact API count", () => {
    const counts = [
      [0, 3, 1],
      [7, 22, 4],
      [0, 5, 0],
      [1, 160, 2],
    ];
    const g = grid(counts);
    const { store, heatmapPane } = harness();
    store.dispatch({ kind: "heatmap-ok", data: g });

    const canvas = heatmapPane.querySelector("canvas")!;
    const [ni, nj] = g.shape;
    for (let i = 0; i < ni; i++) {
      for (let j = 0; j < nj; j++) {
        const ev = new MouseEvent("mousemove");
        // cell (i, j) draws with y flipped; aim at its center
        Object.defineProperty(ev, "offsetX", { value: i * 12 + 6 });
        Object.defineProperty(ev, "offsetY", { value: (nj - 1 - j) * 12 + 6 });
        canvas.dispatchEvent(ev);
        const readout = text(heatmapPane, ".heat-readout");
        expect(readout).toContain(`${counts[i]![j]!} at `);
      }
    }
    expect(text(heatmapPane, ".heat-legend")).toContain("peak 160 at cell (3, 1)");
  });
});

describe("alert feed fidelity", () => {
  it("alerts reach the feed in under a second with wire values intact", async () => {
    const server = new FakeAlertServer();
    const { store, alertsPane } = harness();
    const latencies: number[] = [];
    let emitted = 0;
    const stream = new AlertStream({
      baseUrl: "http://cloud:1",
      token: "t",
      site: "s1",
      onAlert: (a) => {
        latencies.push(performance.now() - emitted);
        store.dispatch({ kind: "alert", alert: a });
      },
      onStatus: (s) => store.dispatch({ kind: "channel", status: s }),
      fetchFn: server.fetchFn,
      backoffBaseMs: 1,
    });
    stream.start();
    await vi.waitFor(() => expect(server.requests).toHaveLength(1));

    const wires = [
      alertWire(1, { rule: "object", detail: "watchlist object: gun" }),
      alertWire(2, { rule: "anomaly", score: 0.97, gids: [4, 5] }),
      alertWire(3, { rule: "occupancy", severity: "warning", score: 9 }),
    ];
    for (const w of wires) {
      emitted = performance.now();
      server.emit(w);
      await vi.waitFor(() =>
        expect(alertsPane.querySelectorAll("li.alert").length).toBeGreaterThanOrEqual(1));
    }
    await vi.waitFor(() => expect(alertsPane.querySelectorAll("li.alert, li.alert.acked")).toHaveLength(3));

    const rows = Array.from(alertsPane.querySelectorAll("li"));
    rows.forEach((row, k) => {
      const w = wires[k]!;
      expect(row.dataset.alertId).toBe(w.alert_id);
      expect(row.querySelector(".alert-rule")?.textContent).toBe(w.rule);
      expect(row.querySelector(".alert-cam")?.textContent).toBe(w.cam);
      expect(row.querySelector(".alert-score")?.textContent).toBe(String(w.score));
      expect(row.querySelector(".alert-detail")?.textContent).toBe(w.detail);
      expect(row.querySelector(".alert-time")?.textContent).toBe(new Date(w.t).toISOString());
    });
    for (const ms of latencies) expect(ms).toBeLessThan(1000);
    stream.stop();
  });

  it("a forced disconnect replays the missed alerts exactly once", async () => {
    const server = new FakeAlertServer();
    const { store, alertsPane } = harness();
    const stream = new AlertStream({
      baseUrl: "http://cloud:1",
      token: "t",
      onAlert: (a) => store.dispatch({ kind: "alert", alert: a }),
      onStatus: (s) => store.dispatch({ kind: "channel", status: s }),
      fetchFn: server.fetchFn,
      backoffBaseMs: 1,
    });
    stream.start();
    await vi.waitFor(() => expect(server.requests).toHaveLength(1));
    server.emit(alertWire(1));
    server.emit(alertWire(2));
    await vi.waitFor(() => expect(alertsPane.querySelectorAll("li")).toHaveLength(2));

    server.dropConnections();
    for (const n of [3, 4, 5]) server.alerts.push(alertWire(n)); // missed while down

    await vi.waitFor(() => expect(alertsPane.querySelectorAll("li")).toHaveLength(5));
    const ids = Array.from(alertsPane.querySelectorAll("li")).map((li) => li.dataset.alertId);
    expect(ids).toEqual([1, 2, 3, 4, 5].map((n) => `s1-${String(n).padStart(8, "0")}`));
    expect(new Set(ids).size).toBe(5); // exactly once each
    expect(text(alertsPane, ".channel")).toBe("live");
    stream.stop();
  });
});
