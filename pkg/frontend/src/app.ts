import { ApiClient, NoData } from "./api.js";
import { AlertStream } from "./alerts.js";
import { OccupancyPoller } from "./poll.js";
import {
  renderAlerts,
  renderAuthBar,
  renderHeatmap,
  renderOccupancy,
  renderRecords,
} from "./panels.js";
import { initialState, Store } from "./state.js";

/**
 * Composition root. Reads the login form, holds the token in memory only,
 * and wires one poller plus one alert stream into the store; the panels
 * re-render from state on every dispatch.
 */

interface Session {
  poller: OccupancyPoller;
  stream: AlertStream;
}

function need(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing #${id} in the page shell`);
  return node;
}

export function boot(): void {
  const form = need("login") as HTMLFormElement;
  const main = need("console");
  let session: Session | null = null;

  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    session?.poller.stop();
    session?.stream.stop();
    const fd = new FormData(form);
    const baseUrl = String(fd.get("server") ?? "").replace(/\/$/, "");
    const token = String(fd.get("token") ?? "");
    const site = String(fd.get("site") ?? "");
    const camera = String(fd.get("camera") ?? "");
    form.reset(); // the token never stays in the DOM
    session = start(main, baseUrl, token, site, camera);
  });
}

function start(main: HTMLElement, baseUrl: string, token: string,
               site: string, camera: string): Session {
  const store = new Store(initialState(site, camera));
  const api = new ApiClient(baseUrl, token);

  main.replaceChildren();
  const authBar = document.createElement("div");
  const controls = document.createElement("form");
  controls.className = "controls";
  controls.innerHTML = `
    <label>camera <input name="cam" value="${camera}"></label>
    <label>from <input name="from" type="datetime-local"></label>
    <label>to <input name="to" type="datetime-local"></label>
    <button name="go-live" type="button">live</button>
    <button name="fetch" type="submit">query window</button>
    <label>heat hours <input name="hours" value="24" size="4"></label>
    <button name="heat" type="button">load heat map</button>
  `;
  const panes = { occupancy: div("pane"), heatmap: div("pane"),
                  alerts: div("pane"), records: div("pane") };
  main.append(authBar, controls, panes.occupancy, panes.heatmap,
              panes.alerts, panes.records);

  store.subscribe((s) => {
    renderAuthBar(authBar, s);
    renderOccupancy(panes.occupancy, s);
    renderHeatmap(panes.heatmap, s);
    renderAlerts(panes.alerts, s, store.dispatch);
    renderRecords(panes.records, s);
  });

  controls.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const fd = new FormData(controls);
    const cam = String(fd.get("cam") ?? camera);
    store.dispatch({ kind: "select-camera", camera: cam });
    const from = Date.parse(String(fd.get("from") ?? ""));
    const to = Date.parse(String(fd.get("to") ?? ""));
    if (Number.isNaN(from) || Number.isNaN(to)) return;
    try {
      store.dispatch({ kind: "set-window", from, to });
    } catch {
      return; // invalid window, leave the previous one standing
    }
    api.records(cam, from, to).then(
      (rows) => store.dispatch({ kind: "records-ok", cam, rows }),
      (err) => store.dispatch({
        kind: err instanceof NoData ? "records-ok" : "records-error",
        ...(err instanceof NoData ? { cam, rows: [] } : { message: String(err) }),
      } as never),
    );
  });
  (controls.elements.namedItem("go-live") as HTMLButtonElement)
    .addEventListener("click", () => store.dispatch({ kind: "set-live" }));
  (controls.elements.namedItem("heat") as HTMLButtonElement)
    .addEventListener("click", () => {
      const fd = new FormData(controls);
      const hours = Number(fd.get("hours") ?? 24);
      api.heatmap(site, hours).then(
        (grid) => store.dispatch({ kind: "heatmap-ok", data: grid }),
        (err) => store.dispatch({ kind: "heatmap-error", message: String(err) }),
      );
    });

  const poller = new OccupancyPoller(api, store);
  const stream = new AlertStream({
    baseUrl,
    token,
    site,
    onAlert: (alert) => store.dispatch({ kind: "alert", alert }),
    onStatus: (status) => store.dispatch({ kind: "channel", status }),
    onAuthExpired: () => store.dispatch({ kind: "auth-expired" }),
  });
  poller.start();
  stream.start();
  return { poller, stream };
}

function div(className: string): HTMLDivElement {
  const node = document.createElement("div");
  node.className = className;
  return node;
}

if (typeof document !== "undefined" && document.getElementById("login") !== null) {
  boot();
}
