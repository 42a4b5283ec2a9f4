import type { HeatmapWire, OccupancyWire, RecordWire } from "./types.js";

/** The session token was rejected; the UI must prompt for re-auth. */
export class AuthExpired extends Error {}

/** The endpoint has nothing for this query (fresh deployment, idle camera). */
export class NoData extends Error {}

/** Any other non-2xx answer, with the server's error text. */
export class ApiError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
  }
}

export type FetchLike = (url: string, init?: {
  headers?: Record<string, string>;
}) => Promise<{
  ok: boolean;
  status: number;
  json(): Promise<unknown>;
}>;

/**
 * Thin typed client over the cloud query endpoints. The token lives only in
 * this object (memory); nothing is persisted client-side.
 */
export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly token: string,
    private readonly fetchFn: FetchLike = (u, i) => fetch(u, i),
  ) {}

  private async get(path: string, params: Record<string, string>): Promise<unknown> {
    const qs = new URLSearchParams(params).toString();
    const res = await this.fetchFn(`${this.baseUrl}${path}?${qs}`, {
      headers: { Authorization: `Bearer ${this.token}` },
    });
    if (res.status === 401) throw new AuthExpired(`${path}: token rejected`);
    if (res.status === 404) throw new NoData(path);
    const body = (await res.json()) as Record<string, unknown>;
    if (!res.ok) {
      throw new ApiError(String(body.detail ?? body.error ?? res.status), res.status);
    }
    return body;
  }

  occupancy(cam: string): Promise<OccupancyWire> {
    return this.get("/v1/occupancy", { cam }) as Promise<OccupancyWire>;
  }

  heatmap(site: string, hours: number): Promise<HeatmapWire> {
    return this.get("/v1/heatmap", { site, hours: String(hours) }) as Promise<HeatmapWire>;
  }

  async records(cam: string, from: number, to: number): Promise<RecordWire[]> {
    const body = await this.get("/v1/records", {
      cam,
      from: String(from),
      to: String(to),
    }) as { records: RecordWire[] };
    return body.records;
  }
}
