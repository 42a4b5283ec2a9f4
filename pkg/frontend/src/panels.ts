import {
  argmaxCell,
  cellAt,
  drawCells,
  hoverText,
  maxCount,
  paintCells,
} from "./heatmap.js";
import type { Dispatch, ViewState } from "./state.js";
import type { AlertWire, RecordWire } from "./types.js";

/**
 * DOM renderers, one per panel. Each is a pure projection of ViewState:
 * every number shown is the payload value unchanged (String(...) only), so
 * headless tests can diff text content against recorded API responses.
 */

const HEAT_CELL_PX = 12;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function stamp(t: number): string {
  return new Date(t).toISOString();
}

export function renderOccupancy(root: HTMLElement, state: ViewState): void {
  const { data, stale, fetchedAt } = state.occupancy;
  root.replaceChildren();
  root.appendChild(el("h2", "panel-title", `occupancy ${state.camera}`));
  if (data === null) {
    root.appendChild(el("p", "panel-empty", "waiting for first poll"));
    return;
  }
  const count = el("div", `occ-count level-${data.level}`, String(data.count));
  count.dataset.level = data.level;
  root.appendChild(count);
  const dl = el("dl", "occ-detail");
  const pairs: Array<[string, string]> = [
    ["level", data.level],
    ["ratio", String(data.ratio)],
    ["today", String(data.cum_today)],
    ["site today", String(data.site_cum)],
    ["window end", stamp(data.t)],
  ];
  for (const [k, v] of pairs) {
    dl.appendChild(el("dt", undefined, k));
    dl.appendChild(el("dd", `occ-${k.replace(" ", "-")}`, v));
  }
  root.appendChild(dl);
  if (stale) {
    root.appendChild(
      el("span", "badge-stale", `stale, last updated ${stamp(fetchedAt)}`),
    );
  }
}

export function renderHeatmap(root: HTMLElement, state: ViewState): void {
  root.replaceChildren();
  root.appendChild(el("h2", "panel-title", `heat map ${state.site}`));
  if (state.heatmap.error !== null) {
    root.appendChild(el("div", "panel-error", state.heatmap.error));
    return;
  }
  const grid = state.heatmap.data;
  if (grid === null) {
    root.appendChild(el("p", "panel-empty", "no heat map loaded"));
    return;
  }
  const [ni, nj] = grid.shape;
  const canvas = el("canvas", "heat-canvas");
  canvas.width = ni * HEAT_CELL_PX;
  canvas.height = nj * HEAT_CELL_PX;
  const paints = paintCells(grid, HEAT_CELL_PX);
  const ctx = canvas.getContext("2d");
  if (ctx !== null) drawCells(ctx, paints);
  const readout = el("div", "heat-readout", "hover a cell for the exact count");
  canvas.addEventListener("mousemove", (ev: MouseEvent) => {
    const hit = cellAt(grid, HEAT_CELL_PX, ev.offsetX, ev.offsetY);
    readout.textContent = hit === null ? "" : hoverText(grid, hit);
  });
  root.appendChild(canvas);
  root.appendChild(readout);
  const peak = argmaxCell(grid);
  const legend = el(
    "p",
    "heat-legend",
    `log color scale, peak ${maxCount(grid)} at cell (${peak.i}, ${peak.j}), ` +
      `window ${stamp(grid.from)} to ${stamp(grid.to)}`,
  );
  root.appendChild(legend);
  if (grid.overflow > 0) {
    root.appendChild(
      el("p", "heat-overflow", `${grid.overflow} points outside the extent`),
    );
  }
}

function alertRow(alert: AlertWire, acked: boolean, dispatch: Dispatch): HTMLLIElement {
  const li = el("li", acked ? "alert acked" : "alert");
  li.dataset.alertId = alert.alert_id;
  li.appendChild(el("span", `sev sev-${alert.severity}`, alert.severity));
  li.appendChild(el("span", "alert-rule", alert.rule));
  li.appendChild(el("span", "alert-cam", alert.cam));
  li.appendChild(el("span", "alert-time", stamp(alert.t)));
  li.appendChild(el("span", "alert-score", String(alert.score)));
  li.appendChild(el("span", "alert-detail", alert.detail));
  const btn = el("button", "alert-ack", acked ? "acked" : "ack");
  btn.disabled = acked;
  btn.addEventListener("click", () => dispatch({ kind: "ack", alertId: alert.alert_id }));
  li.appendChild(btn);
  return li;
}

export function renderAlerts(root: HTMLElement, state: ViewState, dispatch: Dispatch): void {
  root.replaceChildren();
  const head = el("h2", "panel-title", "alerts");
  const badge = el("span", `channel channel-${state.alerts.channel}`, state.alerts.channel);
  head.appendChild(badge);
  root.appendChild(head);
  const ul = el("ul", "alert-feed");
  for (const alert of state.alerts.feed) {
    ul.appendChild(alertRow(alert, state.alerts.acked[alert.alert_id] === true, dispatch));
  }
  root.appendChild(ul);
}

/** Ground-contact point of a record: bottom-center of its box, in camera
 * coordinates (the closed API carries no calibration, deliberately). */
export function groundPoint(row: RecordWire): [number, number] {
  const [x, y, w, h] = row.bbox;
  return [x + w / 2, y + h];
}

export function renderRecords(root: HTMLElement, state: ViewState): void {
  root.replaceChildren();
  const cam = state.records.cam ?? state.camera;
  root.appendChild(el("h2", "panel-title", `records ${cam}`));
  if (state.records.error !== null) {
    root.appendChild(el("div", "panel-error", state.records.error));
    return;
  }
  const rows = state.records.rows;
  if (rows.length === 0) {
    root.appendChild(el("p", "panel-empty", "no records in window"));
    return;
  }

  const svgNs = "http://www.w3.org/2000/svg";
  const scatter = document.createElementNS(svgNs, "svg");
  scatter.setAttribute("class", "record-scatter");
  let maxX = 1;
  let maxY = 1;
  for (const row of rows) {
    const [gx, gy] = groundPoint(row);
    if (gx > maxX) maxX = gx;
    if (gy > maxY) maxY = gy;
  }
  scatter.setAttribute("viewBox", `0 0 ${Math.ceil(maxX * 1.05)} ${Math.ceil(maxY * 1.05)}`);
  for (const row of rows) {
    const [gx, gy] = groundPoint(row);
    const dot = document.createElementNS(svgNs, "circle");
    dot.setAttribute("cx", String(gx));
    dot.setAttribute("cy", String(gy));
    dot.setAttribute("r", "6");
    dot.setAttribute("fill-opacity", String(0.3 + 0.7 * row.anomaly));
    dot.setAttribute("data-gid", String(row.gid));
    scatter.appendChild(dot);
  }
  root.appendChild(scatter);

  const table = el("table", "record-table");
  const thead = el("thead");
  const hr = el("tr");
  for (const h of ["gid", "time", "action", "anomaly", "bbox"]) {
    hr.appendChild(el("th", undefined, h));
  }
  thead.appendChild(hr);
  table.appendChild(thead);
  const tbody = el("tbody");
  for (const row of rows) {
    const tr = el("tr");
    tr.appendChild(el("td", "rec-gid", String(row.gid)));
    tr.appendChild(el("td", "rec-time", stamp(row.t)));
    tr.appendChild(el("td", "rec-action", row.action));
    tr.appendChild(el("td", "rec-anomaly", String(row.anomaly)));
    tr.appendChild(el("td", "rec-bbox", row.bbox.join(", ")));
    tbody.appendChild(tr);
  }
  table.appendChild(tbody);
  root.appendChild(table);
}

export function renderAuthBar(root: HTMLElement, state: ViewState): void {
  root.replaceChildren();
  if (!state.authExpired) return;
  root.appendChild(
    el("div", "auth-expired", "session expired, enter a new token to continue"),
  );
}
