/** HTTP client for the index service.
 *
 * Every request goes through one URL builder that refuses anything outside
 * the documented /v1 surface, so a recording fetch double can assert the
 * portal never invents endpoints. Query submissions carry a monotonically
 * increasing sequence number; callers drop responses whose sequence is
 * older than the newest one already applied (stale-response races).
 */

import type {
  ApiErrorBody,
  ClustersResponse,
  HostRow,
  SourceStatus,
  TriggerRule,
} from "./types";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

const DOCUMENTED = /^\/v1\/(clusters|hosts|query|index\.xml|subscriptions|stream|sources|view|triggers)(\/|\?|$)/;

export class ApiError extends Error {
  status: number;
  offset?: number;
  rule?: string;

  constructor(status: number, body: ApiErrorBody) {
    super(body.error);
    this.status = status;
    this.offset = body.offset;
    this.rule = body.rule;
  }
}

function queryString(params: Record<string, string>): string {
  const entries = Object.entries(params).filter(([, v]) => v !== "");
  if (entries.length === 0) return "";
  return "?" + entries.map(([k, v]) => `${k}=${encodeURIComponent(v)}`).join("&");
}

export class ApiClient {
  private seq = 0;

  constructor(
    private base: string = "",
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  /** Builds a documented /v1 URL; throws on anything off the map. */
  url(path: string, params: Record<string, string> = {}): string {
    const withQuery = path + queryString(params);
    if (!DOCUMENTED.test(withQuery)) {
      throw new Error(`undocumented endpoint: ${withQuery}`);
    }
    return this.base + withQuery;
  }

  nextSeq(): number {
    this.seq += 1;
    return this.seq;
  }

  private async request<T>(path: string, params: Record<string, string>, init?: RequestInit): Promise<T> {
    const resp = await this.fetchImpl(this.url(path, params), init);
    if (!resp.ok) {
      let body: ApiErrorBody;
      try {
        body = (await resp.json()) as ApiErrorBody;
      } catch {
        body = { error: `HTTP ${resp.status}` };
      }
      throw new ApiError(resp.status, body);
    }
    return (await resp.json()) as T;
  }

  async postQuery(q: string, project: string[] = []): Promise<{ rows: HostRow[]; seq: number }> {
    const seq = this.nextSeq();
    const rows = await this.request<HostRow[]>("/v1/query", {}, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ q, project }),
    });
    return { rows, seq };
  }

  getClusters(): Promise<ClustersResponse> {
    return this.request<ClustersResponse>("/v1/clusters", {});
  }

  getHost(hostId: string): Promise<HostRow> {
    return this.request<HostRow>(`/v1/hosts/${encodeURIComponent(hostId)}`, {});
  }

  getSources(): Promise<{ sources: SourceStatus[]; dropped_datagrams: number }> {
    return this.request("/v1/sources", {});
  }

  getTriggers(): Promise<TriggerRule[]> {
    return this.request<TriggerRule[]>("/v1/triggers", {});
  }

  addTrigger(rule: TriggerRule): Promise<TriggerRule> {
    return this.request<TriggerRule>("/v1/triggers", {}, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(rule),
    });
  }

  deleteTrigger(id: string): Promise<{ removed: string }> {
    return this.request(`/v1/triggers/${encodeURIComponent(id)}`, {}, { method: "DELETE" });
  }

  setTriggerEnabled(id: string, enabled: boolean): Promise<TriggerRule> {
    return this.request<TriggerRule>(`/v1/triggers/${encodeURIComponent(id)}`, {}, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ enabled }),
    });
  }

  /** URL for the change-event stream (consumed by EventSource). */
  streamUrl(q: string): string {
    return this.url("/v1/stream", { q });
  }
}

/** Stale-response guard: only strictly newer sequences may be applied. */
export class LatestWins {
  private applied = 0;

  accept(seq: number): boolean {
    if (seq <= this.applied) return false;
    this.applied = seq;
    return true;
  }
}
