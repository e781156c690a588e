import type {
  BeforeRequest,
  CatalogEvent,
  CoexistRequest,
  DayRange,
  ExploreRequest,
  ExploreRowWire,
} from "./types.js";

export type DraftKind = "coexist" | "before" | "explore";
export type Direction = "before" | "after" | "co-occur";

/** The slice of a catalog entry a draft actually needs; a full
 * CatalogEvent satisfies it structurally. */
export interface EventPick {
  event_id: number;
  label: string;
  patient_count: number;
}

/** What the builder panel edits. Mirrors the service request schemas:
 * anything that validates here is sendable as-is. */
export interface ConstraintDraft {
  kind: DraftKind;
  events: EventPick[]; // coexist: 2+, before: [a, b], explore: [input]
  direction: Direction; // explore only
  range: DayRange | null;
  topK: number; // explore only
}

export function emptyDraft(kind: DraftKind = "explore"): ConstraintDraft {
  return { kind, events: [], direction: "after", range: null, topK: 15 };
}

export const RANGE_PRESETS: ReadonlyArray<{ label: string; range: DayRange | null }> = [
  { label: "any time", range: null },
  { label: "0-30 days", range: { lo: 0, hi: 30 } },
  { label: "31-60 days", range: { lo: 31, hi: 60 } },
];

/** Why a draft cannot be submitted; an empty list means it can. */
export function validateDraft(draft: ConstraintDraft): string[] {
  const problems: string[] = [];
  const ids = draft.events.map((e) => e.event_id);
  if (new Set(ids).size !== ids.length) {
    problems.push("the same event is selected twice");
  }
  switch (draft.kind) {
    case "coexist":
      if (ids.length < 2) problems.push("coexist needs at least 2 events");
      if (draft.range) problems.push("coexist does not take a day range");
      break;
    case "before":
      if (ids.length !== 2) problems.push("before needs exactly 2 events (A then B)");
      break;
    case "explore":
      if (ids.length !== 1) problems.push("explore needs exactly 1 event");
      if (!Number.isInteger(draft.topK) || draft.topK < 1) {
        problems.push("top k must be a positive integer");
      }
      if (draft.direction === "co-occur" && draft.range) {
        problems.push("co-occur cannot be combined with a day range");
      }
      break;
  }
  if (draft.range) {
    const { lo, hi } = draft.range;
    if (!Number.isInteger(lo) || !Number.isInteger(hi)) {
      problems.push("day range bounds must be integers");
    } else {
      if (lo < 0) problems.push("day range must start at 0 or later");
      if (lo > hi) problems.push("day range is inverted");
    }
  }
  return problems;
}

export interface PreparedRequest {
  path: "/query/coexist" | "/query/before" | "/query/explore";
  body: CoexistRequest | BeforeRequest | ExploreRequest;
}

export interface RequestOptions {
  countOnly?: boolean;
  limit?: number;
  offset?: number;
}

/** Build the exact request the service expects for a valid draft. */
export function requestFor(draft: ConstraintDraft, opts: RequestOptions = {}): PreparedRequest {
  const problems = validateDraft(draft);
  if (problems.length) {
    throw new Error(`draft is not sendable: ${problems.join("; ")}`);
  }
  const ids = draft.events.map((e) => e.event_id);
  const page = opts.countOnly === false
    ? { limit: opts.limit ?? 200, offset: opts.offset ?? 0 }
    : {};
  switch (draft.kind) {
    case "coexist":
      return {
        path: "/query/coexist",
        body: { events: ids, count_only: opts.countOnly ?? true, ...page },
      };
    case "before":
      return {
        path: "/query/before",
        body: {
          a: ids[0],
          b: ids[1],
          within: draft.range,
          count_only: opts.countOnly ?? true,
          ...page,
        },
      };
    case "explore":
      return {
        path: "/query/explore",
        body: {
          event: ids[0],
          direction: draft.direction,
          within: draft.range,
          top_k: draft.topK,
        },
      };
  }
}

/** Clicking an explore row seeds the next query: a before/within draft
 * between the input event and the clicked related event, oriented so
 * the earlier event comes first. */
export function drillDown(draft: ConstraintDraft, row: ExploreRowWire): ConstraintDraft {
  if (draft.kind !== "explore" || draft.events.length !== 1) {
    throw new Error("drill-down starts from a complete explore draft");
  }
  const input = draft.events[0];
  const related: EventPick = {
    event_id: row.event_id,
    label: row.label,
    patient_count: row.patient_count,
  };
  const pair = draft.direction === "before" ? [related, input] : [input, related];
  return {
    kind: "before",
    events: pair,
    direction: "after",
    range: draft.range ? { ...draft.range } : null,
    topK: draft.topK,
  };
}

export function pickFromCatalog(e: CatalogEvent): EventPick {
  return { event_id: e.event_id, label: e.label, patient_count: e.patient_count };
}
