"""Per-patient extraction of pairwise event relations and day differences.

For every unordered pair of distinct events a patient has, the anchor is
the event with the larger integer ID (the less common one). Relative to
the anchor's occurrences:

  has_before   some related occurrence is on-or-before some anchor occurrence
  has_after    some related occurrence is on-or-after some anchor occurrence
  has_cooccur  the two events share a calendar date

Same-day counts as both before and after, so has_cooccur implies both
flags, and for point events at least one flag is always true. Day
differences are exact signed values (related day - anchor day) over all
occurrence pairs, deduplicated.

All functions are pure per patient, so the build pipeline can partition
patients arbitrarily.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .store import EventTimeDoc


class RelateError(ValueError):
    """Timeline contract violation (e.g. mixed patients in one call)."""


@dataclass(frozen=True)
class PatientPairRelation:
    """Relation flags for one (anchor, related) event pair of one patient."""

    anchor: int
    related: int
    has_before: bool
    has_after: bool
    has_cooccur: bool


@dataclass(frozen=True)
class PatientPairDiff:
    """Exact signed day differences (related - anchor) for one event pair."""

    anchor: int
    related: int
    diffs: frozenset[int]


def _check_single_patient(timeline: Sequence[EventTimeDoc]) -> None:
    patients = {doc.patient_id for doc in timeline}
    if len(patients) > 1:
        raise RelateError(f"timeline mixes patients: {sorted(patients)}")


def extract_patient_relations(timeline: Sequence[EventTimeDoc]) -> list[PatientPairRelation]:
    """Relation flags for every pair of distinct events in one patient's timeline."""
    _check_single_patient(timeline)
    docs = sorted(timeline, key=lambda d: d.event_id)
    out = []
    for i, lo_doc in enumerate(docs):
        lo_times = set(lo_doc.times)
        for hi_doc in docs[i + 1:]:
            if hi_doc.event_id == lo_doc.event_id:
                raise RelateError(f"duplicate event {lo_doc.event_id} in one timeline")
            # anchor is the higher-ID (less common) event; related is lo_doc
            has_before = min(lo_doc.times) <= max(hi_doc.times)
            has_after = max(lo_doc.times) >= min(hi_doc.times)
            has_cooccur = not lo_times.isdisjoint(hi_doc.times)
            out.append(PatientPairRelation(hi_doc.event_id, lo_doc.event_id,
                                           has_before, has_after, has_cooccur))
    return out


def extract_patient_diffs(
    timeline: Sequence[EventTimeDoc],
    max_abs_diff: Optional[int] = None,
) -> list[PatientPairDiff]:
    """Deduplicated signed day differences for every event pair, optionally
    capped to |d| <= max_abs_diff. Pairs whose diffs are all outside the cap
    are dropped."""
    _check_single_patient(timeline)
    docs = sorted(timeline, key=lambda d: d.event_id)
    out = []
    for i, lo_doc in enumerate(docs):
        for hi_doc in docs[i + 1:]:
            if hi_doc.event_id == lo_doc.event_id:
                raise RelateError(f"duplicate event {lo_doc.event_id} in one timeline")
            diffs = {tr - ta for ta in hi_doc.times for tr in lo_doc.times}
            if max_abs_diff is not None:
                diffs = {d for d in diffs if abs(d) <= max_abs_diff}
            if diffs:
                out.append(PatientPairDiff(hi_doc.event_id, lo_doc.event_id,
                                           frozenset(diffs)))
    return out


def occurrence_pairs(events: np.ndarray, days: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All occurrence pairs of one patient, anchor-oriented.

    `events`/`days` are parallel arrays of the patient's (event, day)
    occurrences. Returns (anchor, related, related day - anchor day) for
    every occurrence pair whose anchor event ID exceeds the related one.
    Used by the index builder; agrees with the extract_* functions above.
    """
    ev = np.asarray(events, dtype=np.int64)
    dy = np.asarray(days, dtype=np.int64)
    i_idx, j_idx = np.nonzero(ev[:, None] > ev[None, :])
    return ev[i_idx], ev[j_idx], dy[j_idx] - dy[i_idx]


def timeline_arrays(timeline: Iterable[EventTimeDoc]) -> tuple[np.ndarray, np.ndarray]:
    """Flatten docs into parallel (event, day) occurrence arrays."""
    events: list[int] = []
    days: list[int] = []
    for doc in timeline:
        events.extend([doc.event_id] * len(doc.times))
        days.extend(doc.times)
    return np.array(events, dtype=np.int64), np.array(days, dtype=np.int64)
