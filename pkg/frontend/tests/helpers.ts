// Shared fixtures for DOM tests: the real page markup mounted into jsdom
// and a small in-memory stand-in for the allocation service that speaks
// the same routes and error envelope.

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

const here = dirname(fileURLToPath(import.meta.url));

export function mountPage(): void {
  const html = readFileSync(join(here, "..", "static", "index.html"), "utf8");
  const body = html
    .match(/<body>([\s\S]*)<\/body>/)![1]!
    .replace(/<script[\s\S]*?<\/script>/g, "");
  document.body.innerHTML = body;
}

export async function waitFor(
  predicate: () => boolean,
  what = "condition",
  timeoutMs = 2000,
): Promise<void> {
  const start = Date.now();
  while (!predicate()) {
    if (Date.now() - start > timeoutMs) {
      throw new Error(`timed out waiting for ${what}`);
    }
    await new Promise((r) => setTimeout(r, 5));
  }
}

export function submit(form: HTMLElement): void {
  form.dispatchEvent(new Event("submit", { bubbles: true, cancelable: true }));
}

interface FakeHistoryRow {
  batch_index: number;
  m: number;
  u: number[][];
  w: number[];
  y: number[] | null;
  scored: boolean;
}

interface FakeSession {
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
  history: FakeHistoryRow[];
  what_if: { control: number | null; treatment: number | null };
}

export interface FakeCall {
  method: string;
  path: string;
  body: unknown;
}

function json(status: number, payload: unknown): Response {
  return new Response(JSON.stringify(payload), {
    status,
    headers: { "content-type": "application/json" },
  });
}

function fail(status: number, code: string, message: string): Response {
  return json(status, { code, message, detail: null });
}

/** Route-compatible fake. Allocations alternate C,T,C,T unless a test
 * pins `nextAllocation`; risks are made-up but deterministic, which is
 * the point: the page must show exactly what arrived on the wire. */
export class FakeService {
  sessions = new Map<string, FakeSession>();
  calls: FakeCall[] = [];
  failNext: { status: number; code: string; message: string } | null = null;
  nextAllocation: number[] | null = null;
  hangNext: Promise<void> | null = null;
  private counter = 0;

  riskFor(batchIndex: number): number {
    return 0.52 - 0.07 * batchIndex;
  }

  fetch = async (input: unknown, init?: RequestInit): Promise<Response> => {
    const url = String(input);
    const path = url.replace(/^https?:\/\/[^/]+/, "");
    const method = init?.method ?? "GET";
    const body = init?.body ? JSON.parse(init.body as string) : undefined;
    this.calls.push({ method, path, body });

    if (this.hangNext) {
      const gate = this.hangNext;
      this.hangNext = null;
      await gate;
    }
    if (this.failNext) {
      const f = this.failNext;
      this.failNext = null;
      return fail(f.status, f.code, f.message);
    }

    if (path === "/api/health") return json(200, { status: "ok", version: "0-test" });

    if (path === "/sessions" && method === "POST") {
      this.counter += 1;
      const id = `fake-${this.counter}`;
      const session: FakeSession = {
        session_id: id,
        created_at: "2026-01-01T00:00:00Z",
        revision: 0,
        p: body.p,
        flat: Boolean(body.prior?.flat),
        prior: body.prior,
        l_c: 0,
        l_t: 0,
        n_allocated: 0,
        a: body.prior?.a0 ?? 2,
        b: body.prior?.b0 ?? 1,
        e_sigma2: (body.prior?.b0 ?? 1) / ((body.prior?.a0 ?? 2) - 1),
        history: [],
        what_if: { control: null, treatment: null },
      };
      this.sessions.set(id, session);
      return json(200, {
        session_id: id,
        revision: 0,
        created_at: session.created_at,
      });
    }

    const m = path.match(/^\/sessions\/([^/]+)(\/batches|\/outcomes)?$/);
    if (!m) return fail(404, "NotFound", `no route ${path}`);
    const session = this.sessions.get(decodeURIComponent(m[1]!));
    if (!session) return fail(404, "store.UnknownSession", "no such session");

    if (!m[2] && method === "GET") return json(200, session);

    if (body.expected_revision !== session.revision) {
      return fail(
        409,
        "store.RevisionConflict",
        `expected revision ${body.expected_revision}, session is at ${session.revision}`,
      );
    }

    if (m[2] === "/batches") {
      const rows: number[][] = body.covariates;
      const w =
        this.nextAllocation ?? rows.map((_row: number[], i: number) => i % 2);
      this.nextAllocation = null;
      // batches are numbered from zero, like the real wire
      const batchIndex = session.history.length;
      session.history.push({
        batch_index: batchIndex,
        m: rows.length,
        u: rows,
        w,
        y: null,
        scored: false,
      });
      const nT = w.reduce((acc: number, v: number) => acc + v, 0);
      session.l_t += nT;
      session.l_c += w.length - nT;
      session.n_allocated += w.length;
      session.revision += 1;
      session.what_if = {
        control: 0.31 + 0.01 * session.revision,
        treatment: 0.27 + 0.01 * session.revision,
      };
      const risk = this.riskFor(batchIndex);
      return json(200, {
        allocation: w,
        risk: {
          risk,
          size_term: risk / 2,
          imbalance_quad: 0.01,
          s_c: 1,
          s_t: 1,
          mahalanobis: 0.4,
        },
        revision: session.revision,
        batch_index: batchIndex,
      });
    }

    if (m[2] === "/outcomes") {
      const row =
        body.batch_index !== undefined && body.batch_index !== null
          ? session.history.find((r) => r.batch_index === body.batch_index)
          : session.history.find((r) => !r.scored);
      if (!row) return fail(404, "store.UnknownBatch", "no batch to score");
      if (row.scored) {
        return fail(409, "sequential.AlreadyScored", "batch already scored");
      }
      if (body.y.length !== row.m) {
        return fail(422, "sequential.LengthMismatch", `expected ${row.m} outcomes`);
      }
      row.y = body.y;
      row.scored = true;
      session.a += row.m / 2;
      session.b += 0.25;
      session.e_sigma2 = session.b / (session.a - 1);
      session.revision += 1;
      return json(200, {
        revision: session.revision,
        e_sigma2: session.e_sigma2,
        a: session.a,
        b: session.b,
      });
    }

    return fail(404, "NotFound", `no route ${method} ${path}`);
  };
}
