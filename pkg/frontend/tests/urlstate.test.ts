import { describe, expect, it } from "vitest";

import { emptyDraft } from "../src/drafts.js";
import { draftToParams, paramsEqual, parseParams } from "../src/urlstate.js";

const ev = (id: number) => ({ event_id: id, label: `E${id}`, patient_count: 5 });

describe("url state", () => {
  it("round-trips an explore draft", () => {
    const draft = { ...emptyDraft(), kind: "explore" as const, events: [ev(42)],
                    direction: "before" as const, range: { lo: 0, hi: 30 }, topK: 10 };
    const parsed = parseParams(draftToParams(draft));
    expect(parsed.kind).toBe("explore");
    expect(parsed.eventIds).toEqual([42]);
    expect(parsed.direction).toBe("before");
    expect(parsed.range).toEqual({ lo: 0, hi: 30 });
    expect(parsed.topK).toBe(10);
  });

  it("round-trips a multi-event coexist draft", () => {
    const draft = { ...emptyDraft(), kind: "coexist" as const,
                    events: [ev(3), ev(1), ev(9)], range: null };
    const parsed = parseParams(draftToParams(draft));
    expect(parsed.kind).toBe("coexist");
    expect(parsed.eventIds).toEqual([3, 1, 9]);
    expect(parsed.range).toBeNull();
  });

  it("re-encoding a parsed draft gives identical params", () => {
    const draft = { ...emptyDraft(), kind: "before" as const,
                    events: [ev(7), ev(2)], range: { lo: 1, hi: 90 } };
    const once = draftToParams(draft);
    const parsed = parseParams(once);
    const again = draftToParams({ ...emptyDraft(), kind: parsed.kind,
                                  events: parsed.eventIds.map(ev),
                                  range: parsed.range });
    expect(paramsEqual(once, again)).toBe(true);
  });

  it("falls back to defaults on garbage", () => {
    const parsed = parseParams(new URLSearchParams(
      "kind=frobnicate&events=a,-3,0&dir=sideways&lo=x&hi=9&top=-4"));
    expect(parsed.kind).toBe("explore");
    expect(parsed.eventIds).toEqual([]);
    expect(parsed.direction).toBe("after");
    expect(parsed.range).toBeNull(); // lo unparsable
    expect(parsed.topK).toBe(15);
  });
});
