/**
 * Wire types for the cloud HTTP API.
 *
 * These mirror the server payloads field for field; the dashboard renders
 * them as-is and never derives or caches identity-level state beyond the
 * current response.
 */

export interface OccupancyWire {
  cam: string;
  t: number;
  count: number;
  cum_today: number;
  site_cum: number;
  ratio: number;
  level: "low" | "normal" | "high";
}

export interface HeatmapWire {
  site: string;
  from: number;
  to: number;
  cell_m: number;
  origin: [number, number];
  shape: [number, number];
  counts: number[][];
  overflow: number;
}

export interface RecordWire {
  gid: number;
  cam: string;
  t: number;
  bbox: [number, number, number, number];
  anomaly: number;
  action: string;
}

export interface AlertWire {
  alert_id: string;
  rule: "object" | "anomaly" | "occupancy";
  cam: string;
  t: number;
  severity: "critical" | "warning";
  score: number;
  gids: number[];
  detail: string;
}

export type ChannelStatus = "connecting" | "live" | "down";
