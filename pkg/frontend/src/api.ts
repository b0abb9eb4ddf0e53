// Typed client for the three endpoints the UI is allowed to touch:
// POST /query, GET /traces/{id}, GET /health.

export interface QueryRequest {
  query: string;
  origin?: { lat: number; lon: number };
  session_id?: string;
}

export interface QueryResponse {
  answer: string;
  recommendation?: Record<string, unknown>;
  alternatives: Record<string, unknown>[];
  route: string;
  accepted: boolean;
  flags: string[];
  hops_used: number;
  trace_id: string;
  elapsed_ms: number;
}

export interface TraceStep {
  seq: number;
  agent: string;
  event: string;
  detail: Record<string, unknown>;
}

export interface Trace {
  trace_id: string;
  steps: TraceStep[];
}

export interface Health {
  status: string;
  services: number;
  documents: number;
  index_entries: number;
  index_hash: string;
  provider_mode: string;
}

export class ApiError extends Error {
  constructor(
    message: string,
    public readonly status: number | null,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function parseFailure(resp: Response): Promise<never> {
  let detail = resp.statusText;
  try {
    const body = (await resp.json()) as { detail?: unknown };
    if (typeof body.detail === "string") detail = body.detail;
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(`${resp.status}: ${detail}`, resp.status);
}

export class ApiClient {
  constructor(private readonly baseUrl: string) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  async query(request: QueryRequest): Promise<QueryResponse> {
    let resp: Response;
    try {
      resp = await fetch(this.url("/query"), {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(request),
      });
    } catch (err) {
      throw new ApiError(`server unreachable: ${String(err)}`, null);
    }
    if (!resp.ok) await parseFailure(resp);
    return (await resp.json()) as QueryResponse;
  }

  async trace(traceId: string): Promise<Trace> {
    let resp: Response;
    try {
      resp = await fetch(this.url(`/traces/${encodeURIComponent(traceId)}`));
    } catch (err) {
      throw new ApiError(`server unreachable: ${String(err)}`, null);
    }
    if (!resp.ok) await parseFailure(resp);
    return (await resp.json()) as Trace;
  }

  async health(): Promise<Health> {
    let resp: Response;
    try {
      resp = await fetch(this.url("/health"));
    } catch (err) {
      throw new ApiError(`server unreachable: ${String(err)}`, null);
    }
    if (!resp.ok) await parseFailure(resp);
    return (await resp.json()) as Health;
  }
}
