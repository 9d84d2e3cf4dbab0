// Session console wiring. One page, one session at a time, at most one
// mutation in flight. Every number on screen is lifted from a service
// response field; the client never computes or rescales a risk. Per-batch
// risks are remembered from the submit responses of this page's lifetime;
// history reloaded from the audit endpoint shows n/a in the risk column
// rather than recomputing anything.

import { Api, ApiError, BatchResult, SessionState } from "./api.js";
import { CellError, CsvError, parseMatrix, parseVector } from "./csv.js";
import { sparklineSvg } from "./sparkline.js";

interface AppState {
  session: SessionState | null;
  revision: number | null;
  busy: boolean;
  reportedRisks: Map<number, number>;
  lastBatch: BatchResult | null;
}

export interface AppHandle {
  state: AppState;
  refresh(): Promise<void>;
}

function el<T extends HTMLElement>(doc: Document, id: string): T {
  const node = doc.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function fmt(value: number | null | undefined, digits = 6): string {
  if (value === null || value === undefined) return "n/a";
  return value.toPrecision(digits);
}

function splitOf(w: number[]): { nC: number; nT: number } {
  const nT = w.reduce((acc, v) => acc + (v === 1 ? 1 : 0), 0);
  return { nC: w.length - nT, nT };
}

/** Render the pasted text as a grid with the offending cell marked, so a
 * ragged row or a bad number is visible where it sits. Row numbers in the
 * error are physical line numbers, so iterate the raw lines and only skip
 * blank ones for display. */
function cellErrorGrid(doc: Document, text: string, cell: CellError): HTMLElement {
  const table = doc.createElement("table");
  table.className = "cell-grid";
  text.split(/\r?\n/).forEach((line, i) => {
    if (line.trim() === "") return;
    const tr = doc.createElement("tr");
    const cells = line.split(",");
    cells.forEach((raw, j) => {
      const td = doc.createElement("td");
      td.textContent = raw.trim() === "" ? "(empty)" : raw.trim();
      if (i + 1 === cell.row && j + 1 === cell.col) td.className = "bad-cell";
      tr.appendChild(td);
    });
    // Ragged-row errors can point one past the last cell that exists.
    if (i + 1 === cell.row && cell.col > cells.length) {
      const td = doc.createElement("td");
      td.textContent = "(missing)";
      td.className = "bad-cell";
      tr.appendChild(td);
    }
    table.appendChild(tr);
  });
  return table;
}

export function initApp(doc: Document, api: Api): AppHandle {
  const state: AppState = {
    session: null,
    revision: null,
    busy: false,
    reportedRisks: new Map(),
    lastBatch: null,
  };

  const createForm = el<HTMLFormElement>(doc, "create-form");
  const createError = el<HTMLElement>(doc, "create-error");
  const priorKind = el<HTMLSelectElement>(doc, "prior-kind");
  const priorJsonRow = el<HTMLElement>(doc, "prior-json-row");
  const loadForm = el<HTMLFormElement>(doc, "load-form");
  const loadError = el<HTMLElement>(doc, "load-error");
  const sessionSection = el<HTMLElement>(doc, "session-section");
  const conflictBanner = el<HTMLElement>(doc, "conflict-banner");
  const batchForm = el<HTMLFormElement>(doc, "batch-form");
  const batchError = el<HTMLElement>(doc, "batch-error");
  const badges = el<HTMLElement>(doc, "badges");
  const outcomesForm = el<HTMLFormElement>(doc, "outcomes-form");
  const outcomesError = el<HTMLElement>(doc, "outcomes-error");
  const outcomesBatch = el<HTMLSelectElement>(doc, "outcomes-batch");
  const historyBody = el<HTMLElement>(doc, "history-body");
  const sparklineBox = el<HTMLElement>(doc, "sparkline-box");

  function setBusy(busy: boolean): void {
    state.busy = busy;
    doc.querySelectorAll("button[type=submit]").forEach((b) => {
      (b as HTMLButtonElement).disabled = busy;
    });
  }

  function showConflict(message: string): void {
    conflictBanner.hidden = false;
    el<HTMLElement>(doc, "conflict-message").textContent = message;
  }

  function renderBadges(w: number[], batchIndex: number): void {
    badges.textContent = "";
    const label = doc.createElement("span");
    label.className = "badge-label";
    label.textContent = `batch ${batchIndex} assignments: `;
    badges.appendChild(label);
    w.forEach((arm, i) => {
      const span = doc.createElement("span");
      span.className = arm === 1 ? "badge badge-t" : "badge badge-c";
      span.dataset.arm = arm === 1 ? "T" : "C";
      span.dataset.unit = String(i + 1);
      span.textContent = arm === 1 ? "T" : "C";
      badges.appendChild(span);
    });
  }

  function render(): void {
    const s = state.session;
    if (!s) return;
    sessionSection.hidden = false;
    el<HTMLElement>(doc, "session-title").textContent = `session ${s.session_id}`;
    el<HTMLElement>(doc, "stat-revision").textContent = String(s.revision);
    el<HTMLElement>(doc, "stat-p").textContent = String(s.p);
    el<HTMLElement>(doc, "stat-prior").textContent = s.flat ? "flat" : "informative";
    el<HTMLElement>(doc, "stat-arms").textContent =
      `${s.l_c} control / ${s.l_t} treatment (${s.n_allocated} total)`;
    el<HTMLElement>(doc, "stat-scale").textContent = fmt(s.e_sigma2);
    el<HTMLElement>(doc, "stat-whatif-c").textContent = fmt(s.what_if.control);
    el<HTMLElement>(doc, "stat-whatif-t").textContent = fmt(s.what_if.treatment);

    historyBody.textContent = "";
    for (const row of s.history) {
      const { nC, nT } = splitOf(row.w);
      const tr = doc.createElement("tr");
      tr.dataset.batch = String(row.batch_index);
      const risk = state.reportedRisks.get(row.batch_index);
      const cells = [
        String(row.batch_index),
        String(row.m),
        `${nC}C / ${nT}T`,
        risk === undefined ? "n/a" : fmt(risk),
        row.scored ? "recorded" : "pending",
      ];
      cells.forEach((text, i) => {
        const td = doc.createElement("td");
        td.textContent = text;
        if (i === 3) td.dataset.role = "risk";
        tr.appendChild(td);
      });
      historyBody.appendChild(tr);
    }

    outcomesBatch.textContent = "";
    for (const row of s.history) {
      if (row.scored) continue;
      const opt = doc.createElement("option");
      opt.value = String(row.batch_index);
      opt.textContent = `batch ${row.batch_index} (${row.m} units)`;
      outcomesBatch.appendChild(opt);
    }

    const trajectory = s.history
      .map((row) => state.reportedRisks.get(row.batch_index))
      .filter((r): r is number => r !== undefined);
    sparklineBox.innerHTML = sparklineSvg(trajectory);

    const last = s.history[s.history.length - 1];
    if (last) renderBadges(last.w, last.batch_index);
  }

  async function refresh(): Promise<void> {
    if (!state.session) return;
    state.session = await api.getSession(state.session.session_id);
    state.revision = state.session.revision;
    conflictBanner.hidden = true;
    render();
  }

  function reportError(target: HTMLElement, err: unknown): void {
    if (err instanceof ApiError) {
      if (err.isConflict) {
        showConflict(`${err.code}: ${err.message}`);
        return;
      }
      target.textContent = `${err.code}: ${err.message}`;
    } else if (err instanceof CsvError) {
      target.textContent = err.message;
    } else {
      target.textContent = String(err);
    }
  }

  createForm.addEventListener("submit", (ev) => {
    ev.preventDefault();
    void (async () => {
      if (state.busy) return;
      createError.textContent = "";
      let prior: Record<string, unknown>;
      const p = Number(el<HTMLInputElement>(doc, "create-p").value);
      if (!Number.isInteger(p) || p < 1) {
        createError.textContent = "covariate count must be a positive integer";
        return;
      }
      if (priorKind.value === "flat") {
        prior = {
          flat: true,
          a0: Number(el<HTMLInputElement>(doc, "create-a0").value),
          b0: Number(el<HTMLInputElement>(doc, "create-b0").value),
        };
      } else {
        try {
          prior = JSON.parse(el<HTMLTextAreaElement>(doc, "prior-json").value);
        } catch (err) {
          createError.textContent = `prior JSON does not parse: ${String(err)}`;
          return;
        }
      }
      setBusy(true);
      try {
        const created = await api.createSession(prior, p);
        state.reportedRisks = new Map();
        state.lastBatch = null;
        state.session = await api.getSession(created.session_id);
        state.revision = state.session.revision;
        render();
      } catch (err) {
        reportError(createError, err);
      } finally {
        setBusy(false);
      }
    })();
  });

  priorKind.addEventListener("change", () => {
    priorJsonRow.hidden = priorKind.value === "flat";
  });

  loadForm.addEventListener("submit", (ev) => {
    ev.preventDefault();
    void (async () => {
      if (state.busy) return;
      loadError.textContent = "";
      const id = el<HTMLInputElement>(doc, "load-id").value.trim();
      if (!id) return;
      setBusy(true);
      try {
        state.session = await api.getSession(id);
        state.revision = state.session.revision;
        state.reportedRisks = new Map();
        state.lastBatch = null;
        render();
      } catch (err) {
        reportError(loadError, err);
      } finally {
        setBusy(false);
      }
    })();
  });

  batchForm.addEventListener("submit", (ev) => {
    ev.preventDefault();
    void (async () => {
      if (state.busy || !state.session || state.revision === null) return;
      batchError.textContent = "";
      const text = el<HTMLTextAreaElement>(doc, "batch-text").value;
      const hasHeader = el<HTMLInputElement>(doc, "batch-header").checked;
      let rows: number[][];
      try {
        rows = parseMatrix(text, hasHeader);
      } catch (err) {
        // Bad paste never reaches the service.
        if (err instanceof CsvError && err.cell) {
          batchError.textContent = err.message;
          batchError.appendChild(cellErrorGrid(doc, text, err.cell));
        } else {
          reportError(batchError, err);
        }
        return;
      }
      const quotaC = el<HTMLInputElement>(doc, "quota-c").value.trim();
      const quotaT = el<HTMLInputElement>(doc, "quota-t").value.trim();
      let quota: [number, number] | undefined;
      if (quotaC !== "" || quotaT !== "") {
        if (quotaC === "" || quotaT === "") {
          batchError.textContent = "set both quota fields or neither";
          return;
        }
        quota = [Number(quotaC), Number(quotaT)];
      }
      const seedText = el<HTMLInputElement>(doc, "batch-seed").value.trim();
      setBusy(true);
      try {
        const result = await api.submitBatch(
          state.session.session_id,
          rows,
          state.revision,
          {
            quota,
            rngSeed: seedText === "" ? undefined : Number(seedText),
          },
        );
        state.reportedRisks.set(result.batch_index, result.risk.risk);
        state.lastBatch = result;
        state.revision = result.revision;
        el<HTMLTextAreaElement>(doc, "batch-text").value = "";
        await refresh();
        renderBadges(result.allocation, result.batch_index);
      } catch (err) {
        reportError(batchError, err);
      } finally {
        setBusy(false);
      }
    })();
  });

  outcomesForm.addEventListener("submit", (ev) => {
    ev.preventDefault();
    void (async () => {
      if (state.busy || !state.session || state.revision === null) return;
      outcomesError.textContent = "";
      let y: number[];
      try {
        y = parseVector(el<HTMLTextAreaElement>(doc, "outcomes-text").value);
      } catch (err) {
        reportError(outcomesError, err);
        return;
      }
      const batchIndex = Number(outcomesBatch.value);
      setBusy(true);
      try {
        const result = await api.recordOutcomes(
          state.session.session_id,
          y,
          state.revision,
          batchIndex,
        );
        state.revision = result.revision;
        el<HTMLTextAreaElement>(doc, "outcomes-text").value = "";
        await refresh();
      } catch (err) {
        reportError(outcomesError, err);
      } finally {
        setBusy(false);
      }
    })();
  });

  el<HTMLButtonElement>(doc, "refresh-btn").addEventListener("click", () => {
    void refresh().catch((err) => reportError(batchError, err));
  });

  void api
    .health()
    .then((h) => {
      el<HTMLElement>(doc, "health").textContent = `service ok (v${h.version})`;
    })
    .catch(() => {
      el<HTMLElement>(doc, "health").textContent = "service unreachable";
    });

  return { state, refresh };
}
