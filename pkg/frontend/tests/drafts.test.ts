import { describe, expect, it } from "vitest";

import {
  ConstraintDraft,
  drillDown,
  emptyDraft,
  requestFor,
  validateDraft,
} from "../src/drafts.js";
import type { BeforeRequest, ExploreRequest } from "../src/types.js";

const ev = (id: number, label = `E${id}`) =>
  ({ event_id: id, label, patient_count: 100 - id });

function draft(partial: Partial<ConstraintDraft>): ConstraintDraft {
  return { ...emptyDraft(), ...partial };
}

describe("validateDraft", () => {
  it("accepts a complete explore draft", () => {
    expect(validateDraft(draft({ kind: "explore", events: [ev(1)] }))).toEqual([]);
  });

  it("requires two events for before", () => {
    expect(validateDraft(draft({ kind: "before", events: [ev(1)] }))[0])
      .toMatch(/exactly 2/);
    expect(validateDraft(draft({ kind: "before", events: [ev(1), ev(2)] }))).toEqual([]);
  });

  it("requires at least two events for coexist", () => {
    expect(validateDraft(draft({ kind: "coexist", events: [ev(1)] }))[0])
      .toMatch(/at least 2/);
  });

  it("rejects a day range on coexist", () => {
    const d = draft({ kind: "coexist", events: [ev(1), ev(2)], range: { lo: 0, hi: 30 } });
    expect(validateDraft(d).join()).toMatch(/day range/);
  });

  it("rejects duplicate selections", () => {
    const d = draft({ kind: "coexist", events: [ev(1), ev(1)] });
    expect(validateDraft(d).join()).toMatch(/twice/);
  });

  it("rejects inverted and negative ranges", () => {
    const base = { kind: "before" as const, events: [ev(1), ev(2)] };
    expect(validateDraft(draft({ ...base, range: { lo: 31, hi: 30 } })).join())
      .toMatch(/inverted/);
    expect(validateDraft(draft({ ...base, range: { lo: -1, hi: 30 } })).join())
      .toMatch(/start at 0/);
  });

  it("rejects co-occur with a range and bad top k", () => {
    const d = draft({ kind: "explore", events: [ev(1)], direction: "co-occur",
                      range: { lo: 0, hi: 30 } });
    expect(validateDraft(d).join()).toMatch(/co-occur/);
    expect(validateDraft(draft({ kind: "explore", events: [ev(1)], topK: 0 })).join())
      .toMatch(/top k/);
  });
});

describe("requestFor", () => {
  it("builds the coexist body with count_only by default", () => {
    const { path, body } = requestFor(draft({ kind: "coexist", events: [ev(3), ev(7)] }));
    expect(path).toBe("/query/coexist");
    expect(body).toEqual({ events: [3, 7], count_only: true });
  });

  it("keeps A/B order and the range for before", () => {
    const { path, body } = requestFor(
      draft({ kind: "before", events: [ev(9), ev(2)], range: { lo: 0, hi: 30 } }),
      { countOnly: false, limit: 50, offset: 10 });
    expect(path).toBe("/query/before");
    const b = body as BeforeRequest;
    expect(b.a).toBe(9);
    expect(b.b).toBe(2);
    expect(b.within).toEqual({ lo: 0, hi: 30 });
    expect(b.count_only).toBe(false);
    expect(b.limit).toBe(50);
    expect(b.offset).toBe(10);
  });

  it("builds the explore body", () => {
    const { body } = requestFor(draft({ kind: "explore", events: [ev(4)],
                                        direction: "after", range: { lo: 31, hi: 60 },
                                        topK: 20 }));
    expect(body as ExploreRequest).toEqual(
      { event: 4, direction: "after", within: { lo: 31, hi: 60 }, top_k: 20 });
  });

  it("refuses to build from an invalid draft", () => {
    expect(() => requestFor(draft({ kind: "before", events: [ev(1)] })))
      .toThrow(/not sendable/);
  });
});

describe("drillDown", () => {
  const row = { event_id: 8, label: "E8", patient_count: 41, pct: 12.5 };

  it("seeds input-before-related for an AFTER explore", () => {
    const from = draft({ kind: "explore", events: [ev(1)], direction: "after",
                         range: { lo: 0, hi: 30 } });
    const next = drillDown(from, row);
    expect(next.kind).toBe("before");
    expect(next.events.map((e) => e.event_id)).toEqual([1, 8]);
    expect(next.range).toEqual({ lo: 0, hi: 30 });
    expect(validateDraft(next)).toEqual([]);
  });

  it("flips the orientation for a BEFORE explore", () => {
    const from = draft({ kind: "explore", events: [ev(1)], direction: "before" });
    const next = drillDown(from, row);
    expect(next.events.map((e) => e.event_id)).toEqual([8, 1]);
    expect(next.range).toBeNull();
  });

  it("rejects drill-down from non-explore drafts", () => {
    expect(() => drillDown(draft({ kind: "before", events: [ev(1), ev(2)] }), row))
      .toThrow(/explore/);
  });
});
