// Thin typed client for the annotation service. Every method is one endpoint;
// non-2xx responses become ApiError with the server's one-line detail, so the
// UI can show exactly what the service said.

import type {
  BatchView,
  CreatedRun,
  CreateRunRequest,
  LabelAck,
  MetricsView,
  PairLabel,
  RunSummary,
  StateView,
} from './types.js';

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = 'ApiError';
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private readonly base: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl: string, fetchImpl?: FetchLike) {
    this.base = baseUrl.replace(/\/+$/, '');
    // bind so `this` stays the global object when fetch is the built-in
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  /** Absolute URL for a service path (also used for <img src>). */
  url(path: string): string {
    return this.base + path;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { 'content-type': 'application/json' };
      init.body = JSON.stringify(body);
    }
    const resp = await this.fetchImpl(this.url(path), init);
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const doc = (await resp.json()) as { detail?: unknown };
        if (doc && doc.detail !== undefined) detail = JSON.stringify(doc.detail);
        if (typeof doc.detail === 'string') detail = doc.detail;
      } catch {
        // non-JSON error body: keep the status text
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  listRuns(): Promise<RunSummary[]> {
    return this.request('GET', '/runs');
  }

  createRun(req: CreateRunRequest): Promise<CreatedRun> {
    return this.request('POST', '/runs', req);
  }

  state(runId: string): Promise<StateView> {
    return this.request('GET', `/runs/${runId}/state`);
  }

  advance(runId: string): Promise<{ id: string; status: string }> {
    return this.request('POST', `/runs/${runId}/advance`);
  }

  batch(runId: string): Promise<BatchView> {
    return this.request('GET', `/runs/${runId}/batch`);
  }

  /** Flush one decision; the service accepts any nonempty subset per POST. */
  submitLabel(runId: string, session: string, key: string, label: PairLabel): Promise<LabelAck> {
    return this.request('POST', `/runs/${runId}/labels`, {
      session,
      labels: [{ key, label }],
    });
  }

  metrics(runId: string): Promise<MetricsView> {
    return this.request('GET', `/runs/${runId}/metrics`);
  }
}
