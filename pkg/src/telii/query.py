"""The four temporal query tasks over a built store.

Every query is normalized through the anchor rule first: the less common
event of a pair (the one with the larger ID) keys the posting lists, so
all phrasings with the same meaning hit the same document. "Before" with
no day range means on-or-before (the same-day case is folded into both
directional indexes); strict precedence is expressed as a day range
starting at 1.

TELII paths answer from precomputed posting lists. The elii_* functions
answer the same contracts the baseline way: intersect per-event patient
lists, then evaluate the temporal condition on the fly from the
event-time docs of each candidate.

All functions return sorted patient-table indexes (resolve to PatientId
strings via StoreHandle.patient_ids); explore returns ranked rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .model import CatalogEntry, ModelError, Relation, parse_event_key_text
from .store import StoreHandle

EventRef = Union[int, str]

_EMPTY = np.array([], dtype=np.uint32)


class QueryError(Exception):
    """Base for query-layer failures."""


class EventNotFound(QueryError):
    """An EventRef did not resolve to exactly one catalog entry."""


class InvalidQuery(QueryError):
    """Arguments violate a query precondition."""


class CapExceeded(QueryError):
    """Requested day range exceeds the build-time max_abs_diff cap."""


@dataclass(frozen=True)
class DayRange:
    """Inclusive signed day-difference range."""

    lo: int
    hi: int

    def __post_init__(self) -> None:
        if self.lo > self.hi:
            raise InvalidQuery(f"inverted day range {self.lo}..{self.hi}")


@dataclass(frozen=True)
class ExploreRow:
    """One ranked related event: distinct patients and share of the input
    event's cohort (fraction, not percent)."""

    related_event: int
    patient_count: int
    pct: float


def resolve_event(h: StoreHandle, ref: EventRef) -> CatalogEntry:
    """Resolve an event id, display-form key text, or derived-rule name."""
    if isinstance(ref, int) or (isinstance(ref, str) and ref.strip().isdigit()):
        event_id = int(ref)
        entry = h.by_id.get(event_id)
        if entry is None:
            raise EventNotFound(f"no event with id {event_id} (catalog has {len(h.catalog)})")
        return entry
    text = ref.strip()
    try:
        key = parse_event_key_text(text)
    except ModelError:
        key = None
    if key is not None:
        entry = h.by_canonical.get(key.canonical())
        if entry is not None:
            return entry
    derived = h.by_canonical.get("\x1f".join(("DERIVED", text, "", "")))
    if derived is not None:
        return derived
    probe = text
    hits: list[CatalogEntry] = []
    while probe and not hits:
        hits = _search_catalog(h, probe)
        probe = probe[:-1]
    near = [e.key.display() for e in hits[:5]]
    hint = f"; near matches: {', '.join(near)}" if near else ""
    raise EventNotFound(f"no event matching {ref!r}{hint}")


def _search_catalog(h: StoreHandle, text: str) -> list[CatalogEntry]:
    q = text.lower()
    hits = [e for e in h.catalog if q in e.key.code.lower() or q in e.label.lower()]
    hits.sort(key=lambda e: (-e.patient_count, e.event_id))
    return hits


def normalize_pair(a: int, b: int, relation: Relation) -> tuple[int, Relation, int]:
    """Rewrite any pair query onto its stored (anchor, relation, related) key.

    The anchor is the larger ID (less common event). "a AFTER b" is first
    rewritten as "b BEFORE a"; co-occur is symmetric.
    """
    if a == b:
        raise InvalidQuery(f"self-relation on event {a} is unsupported")
    if relation == Relation.CO_OCCUR:
        return max(a, b), Relation.CO_OCCUR, min(a, b)
    if relation == Relation.AFTER:
        a, b = b, a  # "a after b" == "b before a"
    # now the meaning is "a happens on-or-before b"
    if a > b:
        return a, Relation.AFTER, b
    return b, Relation.BEFORE, a


def _relation_patients(h: StoreHandle, anchor: int, relation: Relation, related: int) -> np.ndarray:
    doc = h.get_relation(anchor, relation, related)
    return doc.patients if doc is not None else _EMPTY


def coexist_two(h: StoreHandle, a: EventRef, b: EventRef) -> np.ndarray:
    """Patients having at least one occurrence of each event."""
    ea, eb = resolve_event(h, a), resolve_event(h, b)
    anchor, _, related = normalize_pair(ea.event_id, eb.event_id, Relation.CO_OCCUR)
    return np.union1d(_relation_patients(h, anchor, Relation.BEFORE, related),
                      _relation_patients(h, anchor, Relation.AFTER, related))


def coexist_group(h: StoreHandle, events: Sequence[EventRef]) -> np.ndarray:
    """Patients having every event of the group (n >= 2)."""
    entries = [resolve_event(h, e) for e in events]
    ids = [e.event_id for e in entries]
    if len(set(ids)) != len(ids):
        raise InvalidQuery("coexist group contains duplicate events")
    if len(ids) < 2:
        raise InvalidQuery("coexist group needs at least 2 events")
    # the least common event gives the smallest intermediate lists
    group_anchor = max(ids)
    rest = [i for i in ids if i != group_anchor]
    result: Optional[np.ndarray] = None
    for other in rest:
        pats = coexist_two(h, group_anchor, other)
        result = pats if result is None else np.intersect1d(result, pats, assume_unique=True)
        if not result.size:
            return _EMPTY
    return result if result is not None else _EMPTY


def _check_within(h: StoreHandle, within: DayRange) -> None:
    if within.lo < 0:
        raise InvalidQuery(f"day range must be non-negative, got {within.lo}..{within.hi}")
    cap = h.max_abs_diff
    if cap is not None and within.hi > cap:
        raise CapExceeded(
            f"time-difference index capped at {cap} days; requested within "
            f"{within.lo}..{within.hi}"
        )


def before(h: StoreHandle, a: EventRef, b: EventRef,
           within: Optional[DayRange] = None) -> np.ndarray:
    """Patients with an occurrence of `a` on-or-before one of `b`; with a
    range, patients with an occurrence pair whose day difference
    (b day - a day) falls inside it."""
    ea, eb = resolve_event(h, a), resolve_event(h, b)
    if within is None:
        anchor, rel, related = normalize_pair(ea.event_id, eb.event_id, Relation.BEFORE)
        return _relation_patients(h, anchor, rel, related)
    _check_within(h, within)
    if ea.event_id == eb.event_id:
        raise InvalidQuery(f"self-relation on event {ea.event_id} is unsupported")
    if ea.event_id > eb.event_id:
        docs = h.range_timediff(ea.event_id, eb.event_id, within.lo, within.hi)
    else:
        docs = h.range_timediff(eb.event_id, ea.event_id, -within.hi, -within.lo)
    parts = [doc.patients for doc in docs]
    if not parts:
        return _EMPTY
    return np.unique(np.concatenate(parts))


def explore(h: StoreHandle, event: EventRef, direction: Relation,
            within: Optional[DayRange] = None, top_k: int = 15) -> list[ExploreRow]:
    """Rank every related event by how many of the input event's patients
    have it in the given direction (optionally inside a day range)."""
    if top_k < 1:
        raise InvalidQuery(f"top_k must be >= 1, got {top_k}")
    entry = resolve_event(h, event)
    input_id = entry.event_id
    if within is None:
        counts = _explore_counts_relation(h, input_id, direction)
    else:
        if direction == Relation.CO_OCCUR:
            raise InvalidQuery("a day range cannot be combined with co-occur")
        _check_within(h, within)
        counts = _explore_counts_ranged(h, input_id, direction, within)
    rows = []
    for related, count in counts.items():
        assert count <= entry.patient_count
        rows.append(ExploreRow(related, count, count / entry.patient_count))
    rows.sort(key=lambda r: (-r.patient_count, r.related_event))
    return rows[:top_k]


def _explore_counts_relation(h: StoreHandle, input_id: int, direction: Relation) -> dict[int, int]:
    # Anchored docs cover related events rarer than the input; the
    # reverse access path covers the more common ones. The two branches
    # are disjoint by construction.
    mirror = {Relation.AFTER: Relation.BEFORE,
              Relation.BEFORE: Relation.AFTER,
              Relation.CO_OCCUR: Relation.CO_OCCUR}[direction]
    counts: dict[int, int] = {}
    for doc in h.scan_by_anchor(input_id, direction):
        counts[doc.related] = len(doc.patients)
    for anchor, n in h.scan_by_related_counts(mirror, input_id):
        counts[anchor] = n
    return counts


def _explore_counts_ranged(h: StoreHandle, input_id: int, direction: Relation,
                           within: DayRange) -> dict[int, int]:
    # Stored diffs are (related day - anchor day). For "X AFTER input":
    # anchored docs need d in [lo, hi], reverse docs d in [-hi, -lo];
    # BEFORE is the mirror image.
    lo, hi = within.lo, within.hi
    if direction == Relation.AFTER:
        anchored = (lo, hi)
        reverse = (-hi, -lo)
    else:
        anchored = (-hi, -lo)
        reverse = (lo, hi)
    parts: dict[int, list[np.ndarray]] = {}
    for doc in h.range_timediff(input_id, None, *anchored):
        parts.setdefault(doc.related, []).append(doc.patients)
    for doc in h.range_timediff_by_related(input_id, *reverse):
        parts.setdefault(doc.anchor, []).append(doc.patients)
    return {
        event: int(np.unique(np.concatenate(plists)).size) if len(plists) > 1 else len(plists[0])
        for event, plists in parts.items()
    }


# ---------------------------------------------------------------------------
# ELII baseline: same contracts, computed on the fly


def elii_coexist_two(h: StoreHandle, a: EventRef, b: EventRef) -> np.ndarray:
    ids = sorted((resolve_event(h, a).event_id, resolve_event(h, b).event_id))
    if ids[0] == ids[1]:
        raise InvalidQuery(f"self-relation on event {ids[0]} is unsupported")
    return _elii_intersect(h, ids)


def elii_coexist_group(h: StoreHandle, events: Sequence[EventRef]) -> np.ndarray:
    ids = [resolve_event(h, e).event_id for e in events]
    if len(set(ids)) != len(ids):
        raise InvalidQuery("coexist group contains duplicate events")
    if len(ids) < 2:
        raise InvalidQuery("coexist group needs at least 2 events")
    return _elii_intersect(h, ids)


def _elii_intersect(h: StoreHandle, ids: Iterable[int]) -> np.ndarray:
    result: Optional[np.ndarray] = None
    for event_id in ids:
        doc = h.get_elii(event_id)
        if doc is None:
            return _EMPTY
        result = doc.patients if result is None else \
            np.intersect1d(result, doc.patients, assume_unique=True)
        if not result.size:
            return _EMPTY
    return result if result is not None else _EMPTY


def elii_before(h: StoreHandle, a: EventRef, b: EventRef,
                within: Optional[DayRange] = None) -> np.ndarray:
    """Same contract as before(), computed the baseline way: intersect the
    per-event patient lists, then test each candidate's event times."""
    ea, eb = resolve_event(h, a), resolve_event(h, b)
    if ea.event_id == eb.event_id:
        raise InvalidQuery(f"self-relation on event {ea.event_id} is unsupported")
    if within is not None and within.lo < 0:
        raise InvalidQuery(f"day range must be non-negative, got {within.lo}..{within.hi}")
    candidates = _elii_intersect(h, (ea.event_id, eb.event_id))
    if not candidates.size:
        return _EMPTY
    cand_set = set(int(p) for p in candidates)
    times_a = {p: days for p, days in h.scan_event_times_raw(ea.event_id) if p in cand_set}
    out = []
    for p, days_b in h.scan_event_times_raw(eb.event_id):
        days_a = times_a.get(p)
        if days_a is None:
            continue
        if within is None:
            if days_a[0] <= days_b[-1]:
                out.append(p)
        elif _any_pair_within(days_a, days_b, within.lo, within.hi):
            out.append(p)
    return np.array(sorted(out), dtype=np.uint32)


def _any_pair_within(days_a: np.ndarray, days_b: np.ndarray, lo: int, hi: int) -> bool:
    # some (ta, tb) with lo <= tb - ta <= hi
    idx = np.searchsorted(days_b, days_a + lo, side="left")
    ok = idx < len(days_b)
    if not ok.any():
        return False
    return bool((days_b[idx[ok]] <= days_a[ok] + hi).any())
