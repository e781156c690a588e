"""Brute-force ground truth over a raw records file.

Answers the same query tasks as the engines by evaluating the relation
definitions literally: group records by patient, then double-loop over
occurrence day pairs. Deliberately shares no code with the relation
extractor, the index builder, or the store, so it cannot inherit their
bugs. Slow and only meant for small corpora and verification runs.
"""

from __future__ import annotations

import json
from typing import Optional, Sequence

from .model import EventKey, canonicalize_event_key, parse_day
from .ingest import DerivedEventRule, RawRecord, apply_derived_rules


class Oracle:
    """Per-patient timelines parsed straight from a records file."""

    def __init__(self, records_path: str, rules: Sequence[DerivedEventRule] = ()):
        # patient -> canonical key -> sorted unique day list
        self.timelines: dict[str, dict[str, list[int]]] = {}
        raw: dict[str, dict[str, set[int]]] = {}
        with open(records_path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                date_text = obj["date"]
                if len(date_text) > 10 and date_text[10] in "T ":
                    date_text = date_text[:10]
                day = parse_day(date_text)
                key = canonicalize_event_key(obj["domain"], obj["code"],
                                             obj.get("code_type") or "",
                                             obj.get("status") or "")
                keys = [key]
                if rules:
                    value = obj.get("value")
                    record = RawRecord(obj["patient_id"], day, key.domain, key.code,
                                       key.code_type, key.status,
                                       None if value is None else str(value))
                    keys.extend(apply_derived_rules(record, rules))
                per_patient = raw.setdefault(obj["patient_id"], {})
                for k in keys:
                    per_patient.setdefault(k.canonical(), set()).add(day)
        for pid, events in raw.items():
            self.timelines[pid] = {k: sorted(days) for k, days in events.items()}

    # -- helpers ------------------------------------------------------------

    @staticmethod
    def _key(event: EventKey | str) -> str:
        return event.canonical() if isinstance(event, EventKey) else event

    def patients_with(self, event: EventKey | str) -> set[str]:
        k = self._key(event)
        return {pid for pid, tl in self.timelines.items() if k in tl}

    # -- the four tasks -------------------------------------------------------

    def coexist(self, events: Sequence[EventKey | str]) -> list[str]:
        keys = [self._key(e) for e in events]
        return sorted(
            pid for pid, tl in self.timelines.items()
            if all(k in tl for k in keys)
        )

    def before(self, a: EventKey | str, b: EventKey | str,
               within: Optional[tuple[int, int]] = None) -> list[str]:
        """Patients with an occurrence of a on-or-before one of b, or with
        (b day - a day) inside the inclusive range when given."""
        ka, kb = self._key(a), self._key(b)
        out = []
        for pid, tl in self.timelines.items():
            if ka not in tl or kb not in tl:
                continue
            if self._pair_match(tl[ka], tl[kb], within):
                out.append(pid)
        return sorted(out)

    @staticmethod
    def _pair_match(days_a: list[int], days_b: list[int],
                    within: Optional[tuple[int, int]]) -> bool:
        for ta in days_a:
            for tb in days_b:
                if within is None:
                    if ta <= tb:
                        return True
                elif within[0] <= tb - ta <= within[1]:
                    return True
        return False

    def explore(self, event: EventKey | str, direction: str,
                within: Optional[tuple[int, int]] = None) -> dict[str, int]:
        """Distinct-patient count per related event key, direction one of
        before/after/co-occur relative to the input event."""
        k = self._key(event)
        counts: dict[str, int] = {}
        for tl in self.timelines.values():
            if k not in tl:
                continue
            days_in = tl[k]
            for other, days_other in tl.items():
                if other == k:
                    continue
                if self._direction_match(days_in, days_other, direction, within):
                    counts[other] = counts.get(other, 0) + 1
        return counts

    @staticmethod
    def _direction_match(days_in: list[int], days_other: list[int], direction: str,
                         within: Optional[tuple[int, int]]) -> bool:
        for ti in days_in:
            for to in days_other:
                d = to - ti  # other relative to the input event
                if direction == "after":
                    ok = d >= 0 if within is None else within[0] <= d <= within[1]
                elif direction == "before":
                    ok = d <= 0 if within is None else within[0] <= -d <= within[1]
                elif direction == "co-occur":
                    ok = d == 0
                else:
                    raise ValueError(f"unknown direction {direction!r}")
                if ok:
                    return True
        return False


def oracle_query(records_path: str, query: dict,
                 rules: Sequence[DerivedEventRule] = ()) -> list[str] | dict[str, int]:
    """One-shot dispatcher over a records file.

    query: {"task": "coexist", "events": [canonical key, ...]}
         | {"task": "before", "a": key, "b": key, "within": [lo, hi] | None}
         | {"task": "explore", "event": key, "direction": dir, "within": ...}
    """
    oracle = Oracle(records_path, rules)
    task = query["task"]
    if task == "coexist":
        return oracle.coexist(query["events"])
    if task == "before":
        within = tuple(query["within"]) if query.get("within") else None
        return oracle.before(query["a"], query["b"], within)
    if task == "explore":
        within = tuple(query["within"]) if query.get("within") else None
        return oracle.explore(query["event"], query["direction"], within)
    raise ValueError(f"unknown oracle task {task!r}")
