import type {
  AlertWire,
  ChannelStatus,
  HeatmapWire,
  OccupancyWire,
  RecordWire,
} from "./types.js";

/**
 * Single state container. Every change, whether user input or network
 * arrival, goes through reduce(); the render layer only ever reads.
 */

export type TimeWindow =
  | { mode: "live" }
  | { mode: "historical"; from: number; to: number };

export interface PanelSet {
  occupancy: boolean;
  heatmap: boolean;
  records: boolean;
  alerts: boolean;
}

export interface ViewState {
  site: string;
  camera: string;
  window: TimeWindow;
  panels: PanelSet;
  occupancy: {
    data: OccupancyWire | null;
    // wall time of the last successful poll; shown on the stale badge
    fetchedAt: number;
    stale: boolean;
  };
  heatmap: { data: HeatmapWire | null; error: string | null };
  records: { rows: RecordWire[]; cam: string | null; error: string | null };
  alerts: {
    feed: AlertWire[];
    acked: Record<string, true>;
    channel: ChannelStatus;
  };
  authExpired: boolean;
}

export function initialState(site: string, camera: string): ViewState {
  return {
    site,
    camera,
    window: { mode: "live" },
    panels: { occupancy: true, heatmap: true, records: false, alerts: true },
    occupancy: { data: null, fetchedAt: 0, stale: false },
    heatmap: { data: null, error: null },
    records: { rows: [], cam: null, error: null },
    alerts: { feed: [], acked: {}, channel: "connecting" },
    authExpired: false,
  };
}

export type Action =
  | { kind: "select-camera"; camera: string }
  | { kind: "set-live" }
  | { kind: "set-window"; from: number; to: number }
  | { kind: "toggle-panel"; panel: keyof PanelSet }
  | { kind: "occupancy-ok"; data: OccupancyWire; at: number }
  | { kind: "occupancy-miss" }
  | { kind: "heatmap-ok"; data: HeatmapWire }
  | { kind: "heatmap-error"; message: string }
  | { kind: "records-ok"; cam: string; rows: RecordWire[] }
  | { kind: "records-error"; message: string }
  | { kind: "alert"; alert: AlertWire }
  | { kind: "ack"; alertId: string }
  | { kind: "channel"; status: ChannelStatus }
  | { kind: "auth-expired" };

export function reduce(state: ViewState, action: Action): ViewState {
  switch (action.kind) {
    case "select-camera":
      return { ...state, camera: action.camera };
    case "set-live":
      return { ...state, window: { mode: "live" } };
    case "set-window":
      if (!(action.from < action.to)) {
        throw new RangeError(`historical window needs from < to, got ${action.from}..${action.to}`);
      }
      return { ...state, window: { mode: "historical", from: action.from, to: action.to } };
    case "toggle-panel":
      return {
        ...state,
        panels: { ...state.panels, [action.panel]: !state.panels[action.panel] },
      };
    case "occupancy-ok":
      return {
        ...state,
        occupancy: { data: action.data, fetchedAt: action.at, stale: false },
      };
    case "occupancy-miss":
      // keep the last values on screen and badge them as stale
      return { ...state, occupancy: { ...state.occupancy, stale: true } };
    case "heatmap-ok":
      return { ...state, heatmap: { data: action.data, error: null } };
    case "heatmap-error":
      return { ...state, heatmap: { ...state.heatmap, error: action.message } };
    case "records-ok":
      return { ...state, records: { rows: action.rows, cam: action.cam, error: null } };
    case "records-error":
      return { ...state, records: { ...state.records, error: action.message } };
    case "alert": {
      // arrival order, duplicates by alert_id dropped (reconnect overlap)
      if (state.alerts.feed.some((a) => a.alert_id === action.alert.alert_id)) {
        return state;
      }
      return {
        ...state,
        alerts: { ...state.alerts, feed: [...state.alerts.feed, action.alert] },
      };
    }
    case "ack":
      if (state.alerts.acked[action.alertId]) return state;
      return {
        ...state,
        alerts: {
          ...state.alerts,
          acked: { ...state.alerts.acked, [action.alertId]: true },
        },
      };
    case "channel":
      return { ...state, alerts: { ...state.alerts, channel: action.status } };
    case "auth-expired":
      return { ...state, authExpired: true };
  }
}

export type Dispatch = (action: Action) => void;

/** Minimal observable store: reduce + notify, nothing else. */
export class Store {
  private listeners: Array<(s: ViewState) => void> = [];

  constructor(public state: ViewState) {}

  dispatch = (action: Action): void => {
    this.state = reduce(this.state, action);
    for (const fn of this.listeners) fn(this.state);
  };

  subscribe(fn: (s: ViewState) => void): void {
    this.listeners.push(fn);
  }
}
