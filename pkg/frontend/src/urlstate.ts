import type { ConstraintDraft, Direction, DraftKind } from "./drafts.js";
import { emptyDraft } from "./drafts.js";

/** Drafts serialize to URL search params so every query is shareable.
 * Only event ids go in the URL; labels are re-resolved on load. */

export interface DraftParams {
  kind: DraftKind;
  eventIds: number[];
  direction: Direction;
  range: { lo: number; hi: number } | null;
  topK: number;
}

const KINDS: DraftKind[] = ["coexist", "before", "explore"];
const DIRECTIONS: Direction[] = ["before", "after", "co-occur"];

export function draftToParams(draft: ConstraintDraft): URLSearchParams {
  const params = new URLSearchParams();
  params.set("kind", draft.kind);
  if (draft.events.length) {
    params.set("events", draft.events.map((e) => e.event_id).join(","));
  }
  if (draft.kind === "explore") {
    params.set("dir", draft.direction);
    params.set("top", String(draft.topK));
  }
  if (draft.range) {
    params.set("lo", String(draft.range.lo));
    params.set("hi", String(draft.range.hi));
  }
  return params;
}

export function parseParams(params: URLSearchParams): DraftParams {
  const base = emptyDraft();
  const kind = params.get("kind");
  const dir = params.get("dir");
  const eventIds = (params.get("events") ?? "")
    .split(",")
    .map((s) => Number.parseInt(s, 10))
    .filter((n) => Number.isInteger(n) && n > 0);
  const lo = Number.parseInt(params.get("lo") ?? "", 10);
  const hi = Number.parseInt(params.get("hi") ?? "", 10);
  const top = Number.parseInt(params.get("top") ?? "", 10);
  return {
    kind: KINDS.includes(kind as DraftKind) ? (kind as DraftKind) : base.kind,
    eventIds,
    direction: DIRECTIONS.includes(dir as Direction) ? (dir as Direction) : base.direction,
    range: Number.isInteger(lo) && Number.isInteger(hi) ? { lo, hi } : null,
    topK: Number.isInteger(top) && top > 0 ? top : base.topK,
  };
}

/** Round trip helper: the params of a parsed draft match the original. */
export function paramsEqual(a: URLSearchParams, b: URLSearchParams): boolean {
  const norm = (p: URLSearchParams) =>
    [...p.entries()].sort(([x], [y]) => x.localeCompare(y)).map((kv) => kv.join("=")).join("&");
  return norm(a) === norm(b);
}
