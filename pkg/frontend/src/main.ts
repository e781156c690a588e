import { ApiClient, ApiRequestError } from "./api.js";
import { toCsv, downloadCsv } from "./csv.js";
import { debounce } from "./debounce.js";
import {
  ConstraintDraft,
  DraftKind,
  Direction,
  RANGE_PRESETS,
  drillDown,
  emptyDraft,
  pickFromCatalog,
  requestFor,
  validateDraft,
} from "./drafts.js";
import { RequestSequencer } from "./seq.js";
import {
  EXPLORE_CSV_HEADER,
  ExploreTableRow,
  buildExploreTable,
  exploreTableToCells,
} from "./table.js";
import { draftToParams, parseParams } from "./urlstate.js";
import type { ExploreResponse, PatientsResponse } from "./types.js";

// The one piece of configuration: same-origin by default, overridable
// via <meta name="telii-base" content="http://host:port">.
const baseUrl =
  document.querySelector<HTMLMetaElement>('meta[name="telii-base"]')?.content ?? "";
const api = new ApiClient(baseUrl);

const $ = <T extends HTMLElement>(sel: string): T => {
  const el = document.querySelector<T>(sel);
  if (!el) throw new Error(`missing element ${sel}`);
  return el;
};

let draft: ConstraintDraft = emptyDraft();
let lastExplore: { rows: ExploreTableRow[]; response: ExploreResponse } | null = null;
const pickerSeq = new RequestSequencer();
const resultSeq = new RequestSequencer();

// ---------------------------------------------------------------------------
// builder panel

function setKind(kind: DraftKind): void {
  draft = { ...draft, kind };
  if (kind === "coexist") draft.range = null;
  renderBuilder();
}

function renderBuilder(): void {
  document.querySelectorAll<HTMLInputElement>('input[name="kind"]').forEach((el) => {
    el.checked = el.value === draft.kind;
  });
  $("#direction-row").style.display = draft.kind === "explore" ? "" : "none";
  $("#topk-row").style.display = draft.kind === "explore" ? "" : "none";
  $("#range-row").style.display = draft.kind === "coexist" ? "none" : "";
  renderChips();
  renderRange();
  renderProblems();
}

function renderChips(): void {
  const box = $("#chips");
  box.innerHTML = "";
  draft.events.forEach((event, i) => {
    const chip = document.createElement("span");
    chip.className = "chip";
    const role = draft.kind === "before" ? (i === 0 ? "A: " : i === 1 ? "B: " : "") : "";
    chip.textContent = `${role}${event.label} (${event.patient_count.toLocaleString()})`;
    const x = document.createElement("button");
    x.textContent = "x";
    x.title = "remove";
    x.onclick = () => {
      draft.events.splice(i, 1);
      renderBuilder();
    };
    chip.appendChild(x);
    box.appendChild(chip);
  });
}

function renderRange(): void {
  const preset = $("#range-presets");
  preset.querySelectorAll("button").forEach((btn) => {
    const idx = Number(btn.dataset.idx);
    const r = RANGE_PRESETS[idx].range;
    const active = JSON.stringify(r) === JSON.stringify(draft.range);
    btn.classList.toggle("active", active);
  });
  ($("#range-lo") as HTMLInputElement).value = draft.range ? String(draft.range.lo) : "";
  ($("#range-hi") as HTMLInputElement).value = draft.range ? String(draft.range.hi) : "";
}

function renderProblems(): void {
  const problems = validateDraft(draft);
  const run = $("#run") as HTMLButtonElement;
  run.disabled = problems.length > 0;
  $("#problems").textContent = problems.join("; ");
}

function wireBuilder(): void {
  document.querySelectorAll<HTMLInputElement>('input[name="kind"]').forEach((el) => {
    el.onchange = () => setKind(el.value as DraftKind);
  });
  ($("#direction") as HTMLSelectElement).onchange = (ev) => {
    draft.direction = (ev.target as HTMLSelectElement).value as Direction;
    renderProblems();
  };
  ($("#topk") as HTMLInputElement).onchange = (ev) => {
    draft.topK = Number.parseInt((ev.target as HTMLInputElement).value, 10);
    renderProblems();
  };
  $("#range-presets").querySelectorAll("button").forEach((btn) => {
    btn.onclick = () => {
      draft.range = RANGE_PRESETS[Number(btn.dataset.idx)].range;
      renderRange();
      renderProblems();
    };
  });
  const customRange = () => {
    const lo = Number.parseInt(($("#range-lo") as HTMLInputElement).value, 10);
    const hi = Number.parseInt(($("#range-hi") as HTMLInputElement).value, 10);
    draft.range = Number.isInteger(lo) && Number.isInteger(hi) ? { lo, hi } : null;
    renderProblems();
  };
  ($("#range-lo") as HTMLInputElement).onchange = customRange;
  ($("#range-hi") as HTMLInputElement).onchange = customRange;
  ($("#run") as HTMLButtonElement).onclick = () => void runDraft(true);
}

// ---------------------------------------------------------------------------
// event picker

function wirePicker(): void {
  const input = $("#picker-input") as HTMLInputElement;
  const list = $("#picker-list");
  const search = debounce(async (text: string) => {
    const ticket = pickerSeq.next();
    try {
      const events = await api.searchEvents(text, 12);
      if (!pickerSeq.isCurrent(ticket)) return; // superseded
      list.innerHTML = "";
      for (const event of events) {
        const li = document.createElement("li");
        li.textContent =
          `${event.label} — ${event.patient_count.toLocaleString()} patients`;
        li.onclick = () => {
          if (!draft.events.some((e) => e.event_id === event.event_id)) {
            draft.events.push(pickFromCatalog(event));
          }
          input.value = "";
          list.innerHTML = "";
          renderBuilder();
        };
        list.appendChild(li);
      }
    } catch (err) {
      showError(err);
    }
  }, 200);
  input.oninput = () => search(input.value.trim());
  input.onfocus = () => search(input.value.trim());
}

// ---------------------------------------------------------------------------
// results panel

function showError(err: unknown): void {
  const box = $("#error");
  box.textContent = err instanceof ApiRequestError
    ? `${err.code}: ${err.message}`
    : String(err);
  box.style.display = "";
}

function clearResults(): void {
  $("#error").style.display = "none";
  $("#summary").textContent = "";
  $("#explore-wrap").style.display = "none";
  $("#patients-wrap").style.display = "none";
  $("#patients").textContent = "";
  lastExplore = null;
}

async function runDraft(pushUrl: boolean): Promise<void> {
  if (validateDraft(draft).length) return;
  const ticket = resultSeq.next();
  clearResults();
  $("#summary").textContent = "running...";
  if (pushUrl) {
    history.pushState(null, "", `?${draftToParams(draft)}`);
  }
  try {
    if (draft.kind === "explore") {
      const { body } = requestFor(draft);
      const response = await api.explore(body as never);
      if (!resultSeq.isCurrent(ticket)) return;
      renderExplore(response);
    } else {
      // counts first; patient ids only on demand
      const { path, body } = requestFor(draft, { countOnly: true });
      const response = path === "/query/coexist"
        ? await api.coexist(body as never)
        : await api.before(body as never);
      if (!resultSeq.isCurrent(ticket)) return;
      renderCount(response);
    }
  } catch (err) {
    if (resultSeq.isCurrent(ticket)) {
      $("#summary").textContent = "";
      showError(err);
    }
  }
}

function renderCount(response: PatientsResponse): void {
  $("#summary").textContent =
    `${response.count.toLocaleString()} patients — ${response.elapsed_ms} ms`;
  $("#patients-wrap").style.display = "";
  const toggle = $("#show-ids") as HTMLButtonElement;
  toggle.style.display = response.count ? "" : "none";
  toggle.onclick = () => void loadPatients(0);
  $("#patients").textContent = "";
}

async function loadPatients(offset: number): Promise<void> {
  const ticket = resultSeq.next();
  try {
    const { path, body } = requestFor(draft, { countOnly: false, limit: 200, offset });
    const response = path === "/query/coexist"
      ? await api.coexist(body as never)
      : await api.before(body as never);
    if (!resultSeq.isCurrent(ticket)) return;
    const ids = response.patients ?? [];
    $("#patients").textContent = ids.join(" ");
    const more = $("#more-ids") as HTMLButtonElement;
    const next = offset + ids.length;
    more.style.display = next < response.count ? "" : "none";
    more.textContent = `more (${next}/${response.count})`;
    more.onclick = () => void loadPatients(next);
  } catch (err) {
    showError(err);
  }
}

function renderExplore(response: ExploreResponse): void {
  const rows = buildExploreTable(response);
  lastExplore = { rows, response };
  $("#summary").textContent =
    `${rows.length} related events — ${response.elapsed_ms} ms`;
  $("#explore-wrap").style.display = "";
  const tbody = $("#explore-table tbody");
  tbody.innerHTML = "";
  rows.forEach((row, i) => {
    const tr = document.createElement("tr");
    tr.title = "drill down: before/within between the input and this event";
    for (const text of exploreTableToCells([row])[0]) {
      const td = document.createElement("td");
      td.textContent = text;
      tr.appendChild(td);
    }
    tr.onclick = () => {
      draft = drillDown(draft, response.rows[i]);
      renderBuilder();
      void runDraft(true);
    };
    tbody.appendChild(tr);
  });
}

function wireResults(): void {
  ($("#csv") as HTMLButtonElement).onclick = () => {
    if (!lastExplore) return;
    downloadCsv("explore.csv",
      toCsv(EXPLORE_CSV_HEADER, exploreTableToCells(lastExplore.rows)));
  };
}

// ---------------------------------------------------------------------------
// URL state and boot

async function restoreFromUrl(): Promise<void> {
  const parsed = parseParams(new URLSearchParams(location.search));
  const events = [];
  for (const id of parsed.eventIds) {
    try {
      events.push(pickFromCatalog(await api.getEvent(id)));
    } catch {
      // stale id in a shared link; drop it
    }
  }
  draft = {
    kind: parsed.kind,
    events,
    direction: parsed.direction,
    range: parsed.range,
    topK: parsed.topK,
  };
  ($("#direction") as HTMLSelectElement).value = draft.direction;
  ($("#topk") as HTMLInputElement).value = String(draft.topK);
  renderBuilder();
  if (!validateDraft(draft).length) {
    await runDraft(false);
  }
}

async function boot(): Promise<void> {
  wireBuilder();
  wirePicker();
  wireResults();
  window.onpopstate = () => void restoreFromUrl();
  try {
    const health = await api.health();
    $("#conn").textContent =
      `${health.patients.toLocaleString()} patients, ${health.events.toLocaleString()} events`;
  } catch (err) {
    $("#conn").textContent = "service unreachable";
    showError(err);
  }
  await restoreFromUrl();
}

void boot();
