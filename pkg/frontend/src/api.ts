// Typed client for the allocation service. Every mutating call carries an
// expected revision; the caller owns the token and must refresh it from
// each response. Nothing in here computes risk: numbers pass through.

export interface RiskBreakdown {
  risk: number;
  size_term: number;
  imbalance_quad: number;
  s_c: number;
  s_t: number;
  mahalanobis: number;
}

export interface BatchResult {
  allocation: number[];
  risk: RiskBreakdown;
  revision: number;
  batch_index: number;
}

export interface OutcomeResult {
  revision: number;
  e_sigma2: number;
  a: number;
  b: number;
}

export interface HistoryRow {
  batch_index: number;
  m: number;
  u: number[][];
  w: number[];
  y: number[] | null;
  scored: boolean;
}

export interface SessionState {
  session_id: string;
  created_at: string;
  revision: number;
  p: number;
  flat: boolean;
  prior: Record<string, unknown>;
  l_c: number;
  l_t: number;
  n_allocated: number;
  a: number;
  b: number;
  e_sigma2: number;
  history: HistoryRow[];
  what_if: { control: number | null; treatment: number | null };
}

export interface CreateResult {
  session_id: string;
  revision: number;
  created_at: string;
}

/** Error envelope from the service: {code, message, detail} plus the
 * HTTP status it arrived with. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
    readonly detail: unknown = null,
  ) {
    super(message);
    this.name = "ApiError";
  }

  get isConflict(): boolean {
    return this.status === 409;
  }
}

async function request<T>(
  base: string,
  method: string,
  path: string,
  body?: unknown,
): Promise<T> {
  let response: Response;
  try {
    response = await fetch(base + path, {
      method,
      headers: body === undefined ? {} : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
  } catch (err) {
    throw new ApiError(0, "network", `service unreachable: ${String(err)}`);
  }
  if (!response.ok) {
    let code = "unknown";
    let message = `HTTP ${response.status}`;
    let detail: unknown = null;
    try {
      const env = await response.json();
      if (env && typeof env.code === "string") code = env.code;
      if (env && typeof env.message === "string") message = env.message;
      detail = env?.detail ?? null;
    } catch {
      // non-JSON error body; keep the status-line message
    }
    throw new ApiError(response.status, code, message, detail);
  }
  return (await response.json()) as T;
}

export class Api {
  constructor(readonly base: string = "") {}

  health(): Promise<{ status: string; version: string }> {
    return request(this.base, "GET", "/api/health");
  }

  createSession(prior: Record<string, unknown>, p: number): Promise<CreateResult> {
    return request(this.base, "POST", "/sessions", { prior, p });
  }

  getSession(sessionId: string): Promise<SessionState> {
    return request(this.base, "GET", `/sessions/${encodeURIComponent(sessionId)}`);
  }

  submitBatch(
    sessionId: string,
    covariates: number[][],
    expectedRevision: number,
    options: { quota?: [number, number]; mode?: string; rngSeed?: number } = {},
  ): Promise<BatchResult> {
    const body: Record<string, unknown> = {
      covariates,
      expected_revision: expectedRevision,
    };
    if (options.quota) body.quota = options.quota;
    if (options.mode) body.mode = options.mode;
    if (options.rngSeed !== undefined) body.rng_seed = options.rngSeed;
    return request(
      this.base,
      "POST",
      `/sessions/${encodeURIComponent(sessionId)}/batches`,
      body,
    );
  }

  recordOutcomes(
    sessionId: string,
    y: number[],
    expectedRevision: number,
    batchIndex?: number,
  ): Promise<OutcomeResult> {
    const body: Record<string, unknown> = { y, expected_revision: expectedRevision };
    if (batchIndex !== undefined) body.batch_index = batchIndex;
    return request(
      this.base,
      "POST",
      `/sessions/${encodeURIComponent(sessionId)}/outcomes`,
      body,
    );
  }
}
