// @vitest-environment jsdom

// End-to-end drive of the page against the real HTTP service, covering
// the two-batch coordinator walkthrough: open a flat three-covariate
// session, paste the eight-unit table in two batches, record outcomes
// for the first batch and watch only the scale move, then confirm that
// an underdetermined first batch is refused and surfaced inline.
//
// The table is pasted as five rows then three: a flat three-covariate
// session needs five units with both arms present before the posterior
// exists, so a four-row first batch is exactly the refusal this test
// pins at the end.
//
// Every number asserted here is read back off the wire by a recording
// fetch wrapper; the DOM must match the recorded response fields.

import { spawn, ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, expect, it } from "vitest";

import { Api } from "../src/api.js";
import { initApp, AppHandle } from "../src/app.js";
import { mountPage, submit, waitFor } from "./helpers.js";

const PORT = 8947;
const BASE = `http://127.0.0.1:${PORT}`;

const TABLE = [
  "0.1,-0.8,-1.3",
  "0.5,2.1,1.3",
  "0.8,-0.2,0.2",
  "-0.3,0.3,0.6",
  "1.1,-0.8,0.0",
  "-0.5,0.7,-0.7",
  "-0.8,1.2,-0.4",
  "-0.7,1.0,1.4",
];

let proc: ChildProcess;
let dataDir: string;
let realFetch: typeof fetch;

interface Recorded {
  method: string;
  path: string;
  status: number;
  body: any;
}
const wire: Recorded[] = [];

function lastOnWire(pathSuffix: string): Recorded {
  for (let i = wire.length - 1; i >= 0; i--) {
    if (wire[i]!.path.endsWith(pathSuffix)) return wire[i]!;
  }
  throw new Error(`nothing recorded for ${pathSuffix}`);
}

beforeAll(async () => {
  realFetch = globalThis.fetch;
  if (typeof realFetch !== "function") {
    throw new Error("no global fetch in this environment");
  }
  dataDir = mkdtempSync(join(tmpdir(), "webui-e2e-"));
  proc = spawn(
    "allocrisk-service",
    ["--port", String(PORT), "--data-dir", dataDir],
    { stdio: "ignore" },
  );
  const deadline = Date.now() + 20000;
  for (;;) {
    try {
      const res = await realFetch(`${BASE}/api/health`);
      if (res.ok) break;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) throw new Error("service did not come up");
    await new Promise((r) => setTimeout(r, 150));
  }
  globalThis.fetch = (async (input: any, init?: any) => {
    const res = await realFetch(input, init);
    try {
      wire.push({
        method: init?.method ?? "GET",
        path: String(input).replace(/^https?:\/\/[^/]+/, ""),
        status: res.status,
        body: await res.clone().json(),
      });
    } catch {
      // non-JSON body; nothing to record
    }
    return res;
  }) as typeof fetch;
}, 30000);

afterAll(() => {
  globalThis.fetch = realFetch;
  proc?.kill();
  rmSync(dataDir, { recursive: true, force: true });
});

function byId<T extends HTMLElement>(id: string): T {
  return document.getElementById(id) as T;
}

function setValue(id: string, value: string): void {
  (byId(id) as HTMLInputElement | HTMLTextAreaElement).value = value;
}

function badgeArms(): string[] {
  return Array.from(document.querySelectorAll("#badges .badge")).map(
    (b) => (b as HTMLElement).dataset.arm!,
  );
}

function riskCells(): string[] {
  return Array.from(
    document.querySelectorAll("#history-body td[data-role=risk]"),
  ).map((td) => td.textContent!);
}

function freshApp(): AppHandle {
  mountPage();
  return initApp(document, new Api(BASE));
}

it("walks a coordinator through two batches against the live service", async () => {
  freshApp();

  setValue("create-p", "3");
  submit(byId("create-form"));
  await waitFor(() => !byId("session-section").hidden, "session view", 10000);
  expect(byId("stat-revision").textContent).toBe("0");
  expect(byId("stat-prior").textContent).toBe("flat");

  // batch 1: first five rows of the table
  setValue("batch-text", TABLE.slice(0, 5).join("\n"));
  submit(byId("batch-form"));
  await waitFor(
    () => byId("history-body").children.length === 1,
    "first history row",
    10000,
  );
  const batch1 = lastOnWire("/batches");
  expect(batch1.status).toBe(200);
  expect(batch1.body.allocation).toHaveLength(5);
  expect(badgeArms()).toEqual(
    batch1.body.allocation.map((w: number) => (w === 1 ? "T" : "C")),
  );
  expect(riskCells()).toEqual([batch1.body.risk.risk.toPrecision(6)]);
  // both arms must be occupied for the flat posterior to exist
  expect(new Set(batch1.body.allocation).size).toBe(2);

  // batch 2: remaining three rows
  setValue("batch-text", TABLE.slice(5).join("\n"));
  submit(byId("batch-form"));
  await waitFor(
    () => byId("history-body").children.length === 2,
    "second history row",
    10000,
  );
  const batch2 = lastOnWire("/batches");
  expect(batch2.body.allocation).toHaveLength(3);
  expect(batch2.body.batch_index).toBe(1);
  expect(badgeArms()).toEqual(
    batch2.body.allocation.map((w: number) => (w === 1 ? "T" : "C")),
  );
  expect(riskCells()).toEqual([
    batch1.body.risk.risk.toPrecision(6),
    batch2.body.risk.risk.toPrecision(6),
  ]);
  expect(document.querySelectorAll("#sparkline-box circle")).toHaveLength(2);

  const audit = lastOnWire(batch1.path.replace("/batches", ""));
  expect(audit.body.n_allocated).toBe(8);
  expect(byId("stat-arms").textContent).toBe(
    `${audit.body.l_c} control / ${audit.body.l_t} treatment (8 total)`,
  );

  // outcomes for batch 1 move the scale and nothing else
  const badgesBefore = badgeArms();
  const risksBefore = riskCells();
  const scaleBefore = byId("stat-scale").textContent;
  byId<HTMLSelectElement>("outcomes-batch").value = "0";
  setValue("outcomes-text", "0.9\n-0.4\n1.2\n0.3\n-1.1");
  submit(byId("outcomes-form"));
  await waitFor(
    () => byId("stat-scale").textContent !== scaleBefore,
    "scale update",
    10000,
  );
  const scored = lastOnWire("/outcomes");
  expect(scored.status).toBe(200);
  expect(byId("stat-scale").textContent).toBe(
    scored.body.e_sigma2.toPrecision(6),
  );
  expect(badgeArms()).toEqual(badgesBefore);
  expect(riskCells()).toEqual(risksBefore);
  expect(byId("history-body").children[0]!.textContent).toContain("recorded");
  expect(byId("history-body").children[1]!.textContent).toContain("pending");
}, 60000);

it("surfaces the refusal of an underdetermined first batch inline", async () => {
  freshApp();

  setValue("create-p", "3");
  submit(byId("create-form"));
  await waitFor(() => !byId("session-section").hidden, "session view", 10000);

  // four rows cannot pin down five linear coefficients with both arms
  setValue("batch-text", TABLE.slice(0, 4).join("\n"));
  submit(byId("batch-form"));
  await waitFor(() => byId("batch-error").textContent !== "", "error", 10000);
  const refused = lastOnWire("/batches");
  expect(refused.status).toBe(422);
  expect(refused.body.code).toBe("allocator.InfeasibleConstraint");
  expect(byId("batch-error").textContent).toContain("InfeasibleConstraint");
  expect(byId("history-body").children).toHaveLength(0);
  expect(byId("stat-revision").textContent).toBe("0");

  // the same session accepts a five-row batch afterwards
  setValue("batch-text", TABLE.slice(0, 5).join("\n"));
  submit(byId("batch-form"));
  await waitFor(
    () => byId("history-body").children.length === 1,
    "recovery",
    10000,
  );
  expect(byId("stat-revision").textContent).toBe("1");
}, 60000);
