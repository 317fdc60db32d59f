// Single-page console wiring. All state lives on the service; this file
// renders what the API returns and posts what the forms collect. The only
// math done locally is the band coloring in bands.ts, over values already
// on screen.

import {
  ApiError,
  ConnectionError,
  ServiceClient,
  StepInFlightError,
} from "./api.js";
import {
  BAND_LABELS,
  colorTimeline,
  MisalignedReferenceError,
  type Band,
} from "./bands.js";
import { branchAllowed, compareTimelines } from "./compare.js";
import { numericCodes, overlay } from "./sparkline.js";
import { toRows, validateStepForm, type TimelineRow } from "./timeline.js";
import type { SessionBody, WireAction } from "./types.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
};

interface AppState {
  client: ServiceClient | null;
  backends: string[];
  sessions: Map<string, SessionBody>;
  activeId: string | null;
  compareWith: string | null;
  bands: Map<string, Band[][]>;
}

const state: AppState = {
  client: null,
  backends: [],
  sessions: new Map(),
  activeId: null,
  compareWith: null,
  bands: new Map(),
};

function describeError(err: unknown): string {
  if (err instanceof ApiError) return `${err.status} ${err.code}: ${err.message}`;
  if (err instanceof Error) return err.message;
  return String(err);
}

function setBanner(text: string, kind: "error" | "ok" | "") {
  const banner = $("banner");
  banner.textContent = text;
  banner.className = kind;
}

// --- connection -------------------------------------------------------------

async function connect() {
  const url = ($("service-url") as HTMLInputElement).value.trim();
  const client = new ServiceClient(url);
  try {
    const health = await client.healthz();
    state.client = client;
    state.backends = health.backends;
    setBanner(
      `connected: ${health.backends.length} backends, ${health.sessions} live sessions`,
      "ok",
    );
    const select = $("backend") as HTMLSelectElement;
    select.innerHTML = "";
    for (const name of health.backends) {
      const option = document.createElement("option");
      option.value = name;
      option.textContent = name;
      select.appendChild(option);
    }
    ($("create-form") as HTMLFieldSetElement).disabled = false;
  } catch (err) {
    state.client = null;
    ($("create-form") as HTMLFieldSetElement).disabled = true;
    if (err instanceof ConnectionError) {
      setBanner(`${err.message}; check the URL and retry`, "error");
    } else {
      setBanner(describeError(err), "error");
    }
  }
}

// --- session creation and attachment ----------------------------------------

async function createSession() {
  if (!state.client) return;
  const out = $("create-error");
  out.textContent = "";
  try {
    const descriptor = await state.client.createSession({
      backend: ($("backend") as HTMLSelectElement).value,
      profile: {
        age: Number(($("age") as HTMLInputElement).value),
        gender: ($("gender") as HTMLInputElement).value,
        chief_complaint: ($("complaint") as HTMLInputElement).value,
      },
      diagnostics: {
        primary: { content: ($("diagnosis") as HTMLInputElement).value },
      },
      seed: Number(($("seed") as HTMLInputElement).value) || 0,
    });
    await attach(descriptor.id);
  } catch (err) {
    // unknown backend and schema violations land here inline
    out.textContent = describeError(err);
  }
}

async function attach(id: string) {
  if (!state.client) return;
  const body = await state.client.getSession(id);
  state.sessions.set(id, body);
  state.activeId = id;
  state.compareWith = null;
  renderTabs();
  renderSession();
}

async function refreshActive() {
  if (!state.client || !state.activeId) return;
  const body = await state.client.getSession(state.activeId);
  state.sessions.set(state.activeId, body);
  if (state.compareWith) {
    state.sessions.set(
      state.compareWith,
      await state.client.getSession(state.compareWith),
    );
  }
  renderSession();
}

// --- order composer -----------------------------------------------------------

function orderRows(): HTMLDivElement[] {
  return [...$("orders").querySelectorAll("div.order")] as HTMLDivElement[];
}

function addOrderRow() {
  const row = document.createElement("div");
  row.className = "order";
  row.innerHTML = `
    <select class="kind">
      <option value="inquiry">inquiry</option>
      <option value="intervention">intervention</option>
    </select>
    <input class="code" placeholder="code (e.g. sodium)" />
    <input class="display" placeholder="display name (optional)" />
    <button type="button" class="remove">x</button>`;
  (row.querySelector(".remove") as HTMLButtonElement).onclick = () => {
    row.remove();
    updateStepButton();
  };
  (row.querySelector(".code") as HTMLInputElement).oninput = updateStepButton;
  $("orders").appendChild(row);
  updateStepButton();
}

function collectOrders(): WireAction[] {
  const actions: WireAction[] = [];
  for (const row of orderRows()) {
    const code = (row.querySelector(".code") as HTMLInputElement).value.trim();
    if (!code) continue;
    const display = (row.querySelector(".display") as HTMLInputElement).value.trim();
    const action: WireAction = {
      kind: (row.querySelector(".kind") as HTMLSelectElement).value as
        | "inquiry"
        | "intervention",
      code,
    };
    if (display) action.display_name = display;
    actions.push(action);
  }
  return actions;
}

function updateStepButton() {
  const active = state.activeId ? state.sessions.get(state.activeId) : undefined;
  const advance = Number(($("advance") as HTMLInputElement).value);
  const problem = validateStepForm(collectOrders().length, advance);
  const pending =
    state.client !== null &&
    state.activeId !== null &&
    state.client.stepPending(state.activeId);
  const button = $("step-button") as HTMLButtonElement;
  button.disabled = !active || problem !== null || pending;
  $("step-validation").textContent = active && problem ? problem : "";
}

async function submitStep() {
  if (!state.client || !state.activeId) return;
  const body = state.sessions.get(state.activeId);
  if (!body) return;
  const advance = Number(($("advance") as HTMLInputElement).value);
  const out = $("step-error");
  out.textContent = "";
  ($("step-button") as HTMLButtonElement).disabled = true;
  try {
    await state.client.step(state.activeId, {
      at: body.descriptor.now + advance,
      actions: collectOrders(),
    });
    // re-fetch rather than patching local state: what renders is always
    // exactly what the service would serve a fresh page load
    await refreshActive();
  } catch (err) {
    if (err instanceof ApiError && err.status === 409) {
      out.innerHTML = "";
      out.append(`time conflict: ${err.message} `);
      const reload = document.createElement("button");
      reload.textContent = "refresh session";
      reload.onclick = () => void refreshActive();
      out.appendChild(reload);
    } else if (err instanceof StepInFlightError) {
      out.textContent = "previous step still running";
    } else {
      out.textContent = describeError(err);
    }
  } finally {
    updateStepButton();
  }
}

// --- branching ----------------------------------------------------------------

function updateBranchButton() {
  const active = state.activeId ? state.sessions.get(state.activeId) : undefined;
  const atStep = Number(($("branch-at") as HTMLInputElement).value);
  ($("branch-button") as HTMLButtonElement).disabled =
    !active || !branchAllowed(active.descriptor, atStep);
}

async function submitBranch() {
  if (!state.client || !state.activeId) return;
  const atStep = Number(($("branch-at") as HTMLInputElement).value);
  try {
    const descriptor = await state.client.branch(state.activeId, atStep);
    const body = await state.client.getSession(descriptor.id);
    state.sessions.set(descriptor.id, body);
    state.compareWith = descriptor.id;
    renderTabs();
    renderSession();
  } catch (err) {
    $("step-error").textContent = describeError(err);
  }
}

// --- reference loading ----------------------------------------------------------

async function loadReference(file: File) {
  if (!state.activeId) return;
  const body = state.sessions.get(state.activeId);
  if (!body) return;
  const out = $("reference-status");
  out.className = "";
  try {
    const parsed = JSON.parse(await file.text());
    const episode = Array.isArray(parsed) ? { timeline: parsed } : parsed;
    state.bands.set(state.activeId, colorTimeline(body.history, episode));
    out.textContent = `reference loaded: ${file.name}`;
    renderSession();
  } catch (err) {
    state.bands.delete(state.activeId);
    out.className = "error";
    if (err instanceof MisalignedReferenceError) {
      out.textContent = err.message;
    } else {
      out.textContent = `could not read reference: ${describeError(err)}`;
    }
    renderSession();
  }
}

// --- rendering ------------------------------------------------------------------

function renderTabs() {
  const tabs = $("tabs");
  tabs.innerHTML = "";
  for (const [id, body] of state.sessions) {
    const tab = document.createElement("button");
    const branchTag = body.descriptor.parent ? " (branch)" : "";
    tab.textContent = `${id}${branchTag}`;
    tab.className = id === state.activeId ? "tab active" : "tab";
    tab.onclick = () => {
      state.activeId = id;
      state.compareWith = null;
      renderTabs();
      renderSession();
    };
    tabs.appendChild(tab);
  }
}

function rowElement(row: TimelineRow, band: Band): HTMLTableRowElement {
  const tr = document.createElement("tr");
  tr.className = band === "none" ? "" : `band-${band}`;
  const cells = [
    `${row.timestamp}`,
    row.kind,
    row.actionLabel,
  ];
  for (const text of cells) {
    const td = document.createElement("td");
    td.textContent = text;
    tr.appendChild(td);
  }
  const outcomeCell = document.createElement("td");
  if (row.chips.length > 0) {
    for (const chip of row.chips) {
      const span = document.createElement("span");
      span.className = "chip";
      span.textContent = chip;
      outcomeCell.appendChild(span);
    }
  } else {
    outcomeCell.textContent = row.outcomeText;
    if (row.kind === "intervention") outcomeCell.className = "no-value";
  }
  tr.appendChild(outcomeCell);
  const bandCell = document.createElement("td");
  bandCell.textContent = BAND_LABELS[band];
  tr.appendChild(bandCell);
  return tr;
}

function renderPane(
  container: HTMLElement,
  body: SessionBody,
  bands: Band[][] | undefined,
  sharedPrefix: number | null,
  divergenceIndex: number | null,
) {
  container.innerHTML = "";
  const caption = document.createElement("p");
  const d = body.descriptor;
  const parent = d.parent ? ` branched from ${d.parent[0]} at step ${d.parent[1]}` : "";
  caption.textContent = `${d.id} on ${d.backend}, t=${d.now} min, ${d.history_length} steps${parent}`;
  container.appendChild(caption);

  const table = document.createElement("table");
  table.innerHTML =
    "<thead><tr><th>t (min)</th><th>kind</th><th>action</th><th>outcome</th><th>band</th></tr></thead>";
  const tbody = document.createElement("tbody");
  for (const row of toRows(body.history)) {
    const band = bands?.[row.setIndex]?.[row.eventIndex] ?? "none";
    const tr = rowElement(row, band);
    if (sharedPrefix !== null && row.setIndex < sharedPrefix) {
      tr.classList.add("shared");
    }
    if (divergenceIndex !== null && row.setIndex === divergenceIndex) {
      tr.classList.add("diverged");
    }
    tbody.appendChild(tr);
  }
  table.appendChild(tbody);
  container.appendChild(table);
}

function renderSparklines(left: SessionBody, right: SessionBody, divergence: number | null) {
  const host = $("sparklines");
  host.innerHTML = "";
  const codes = numericCodes([...left.history, ...right.history]);
  for (const code of codes) {
    const figure = overlay(left.history, right.history, code, 220, 48, divergence);
    if (!figure) continue;
    const block = document.createElement("div");
    block.className = "spark";
    const label = document.createElement("span");
    label.textContent = code;
    block.appendChild(label);
    const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
    svg.setAttribute("viewBox", "0 0 220 48");
    svg.setAttribute("width", "220");
    svg.setAttribute("height", "48");
    const mk = (path: string, cls: string) => {
      const p = document.createElementNS("http://www.w3.org/2000/svg", "path");
      p.setAttribute("d", path);
      p.setAttribute("class", cls);
      svg.appendChild(p);
    };
    mk(figure.originPath, "line-origin");
    mk(figure.branchPath, "line-branch");
    if (figure.divergenceX !== null) {
      const mark = document.createElementNS("http://www.w3.org/2000/svg", "line");
      mark.setAttribute("x1", String(figure.divergenceX));
      mark.setAttribute("x2", String(figure.divergenceX));
      mark.setAttribute("y1", "0");
      mark.setAttribute("y2", "48");
      mark.setAttribute("class", "divergence");
      svg.appendChild(mark);
    }
    block.appendChild(svg);
    host.appendChild(block);
  }
}

function renderSession() {
  const leftHost = $("pane-left");
  const rightHost = $("pane-right");
  const active = state.activeId ? state.sessions.get(state.activeId) : undefined;
  if (!active) {
    leftHost.innerHTML = "<p>no session attached</p>";
    rightHost.innerHTML = "";
    $("sparklines").innerHTML = "";
    updateStepButton();
    updateBranchButton();
    return;
  }
  const other = state.compareWith ? state.sessions.get(state.compareWith) : undefined;
  if (other) {
    const cmp = compareTimelines(active.history, other.history);
    renderPane(leftHost, active, state.bands.get(active.descriptor.id), cmp.sharedPrefix, cmp.divergenceIndex);
    renderPane(rightHost, other, undefined, cmp.sharedPrefix, cmp.divergenceIndex);
    renderSparklines(active, other, cmp.divergenceIndex);
  } else {
    renderPane(leftHost, active, state.bands.get(active.descriptor.id), null, null);
    rightHost.innerHTML = "";
    $("sparklines").innerHTML = "";
  }
  ($("branch-at") as HTMLInputElement).max = String(active.descriptor.history_length);
  updateStepButton();
  updateBranchButton();
}

// --- boot -------------------------------------------------------------------------

export function boot() {
  $("connect-button").onclick = () => void connect();
  $("create-button").onclick = () => void createSession();
  $("add-order").onclick = () => addOrderRow();
  $("step-button").onclick = () => void submitStep();
  $("branch-button").onclick = () => void submitBranch();
  ($("advance") as HTMLInputElement).oninput = updateStepButton;
  ($("branch-at") as HTMLInputElement).oninput = updateBranchButton;
  ($("reference-file") as HTMLInputElement).onchange = (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (file) void loadReference(file);
  };
  addOrderRow();
  renderSession();
}

boot();
