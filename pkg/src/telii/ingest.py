"""Ingest raw records into a data directory.

Reads a JSON-lines record file, applies derived-event rules, counts
distinct patients per event to assign Event IDs (more patients = smaller
ID), and writes the per-(patient, event) sorted day arrays as segment
files, ready for index building.

Duplicate (patient, event, date) occurrences collapse to a single time
point; derived events coexist with the natural events of the records
that trigger them.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from array import array
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import store
from .model import (
    MIN_DAY,
    CatalogEntry,
    EventKey,
    ModelError,
    canonicalize_event_key,
    default_label,
    parse_day,
)
from .store import EventTimeDoc, SegmentWriter

__all__ = [
    "IngestError",
    "RawRecord",
    "DerivedEventRule",
    "EventTimeDoc",
    "load_rules",
    "apply_derived_rules",
    "scan_records",
    "assign_event_ids",
    "build_event_time",
    "run_ingest",
]

_KEY_FIELD_CONDITIONS = ("domain", "code", "code_type", "status")


class IngestError(Exception):
    """Malformed input file, rule file, or catalog mismatch."""


@dataclass(frozen=True)
class RawRecord:
    """One parsed input line: a patient, a date, and event fields."""

    patient_id: str
    day: int
    domain: str
    code: str
    code_type: str = ""
    status: str = ""
    value: Optional[str] = None

    def natural_key(self) -> EventKey:
        return canonicalize_event_key(self.domain, self.code, self.code_type, self.status)


@dataclass(frozen=True)
class _Condition:
    field: str
    equals: Optional[str] = None
    pattern: Optional[re.Pattern] = None

    def holds(self, record: RawRecord) -> bool:
        if self.field == "value":
            return record.value is not None and bool(self.pattern.search(record.value))
        got = getattr(record, self.field)
        if self.field == "domain":
            got = got.strip().upper()
        else:
            got = got.strip()
        return got == self.equals


@dataclass(frozen=True)
class DerivedEventRule:
    """Named disjunction of condition conjunctions over record fields.

    A record triggers the rule when ANY clause has ALL its conditions
    hold; the rule name becomes the code of a DERIVED event.
    """

    name: str
    clauses: tuple[tuple[_Condition, ...], ...] = field(default_factory=tuple)

    def derived_key(self) -> EventKey:
        return EventKey("DERIVED", self.name)

    def matches(self, record: RawRecord) -> bool:
        return any(all(c.holds(record) for c in clause) for clause in self.clauses)


def load_rules(path: str) -> list[DerivedEventRule]:
    """Load and validate a rules file (regexes must compile here, not at apply time)."""
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise IngestError(f"rules file {path}: invalid JSON: {exc}") from None
    if not isinstance(raw, list):
        raise IngestError(f"rules file {path}: top level must be an array of rules")
    rules = []
    for ri, r in enumerate(raw):
        name = (r.get("name") or "").strip()
        if not name:
            raise IngestError(f"rules file {path}: rule #{ri} has no name")
        clauses = []
        raw_clauses = r.get("clauses") or []
        if not raw_clauses:
            raise IngestError(f"rule {name!r}: needs at least one clause")
        for ci, clause in enumerate(raw_clauses):
            conds = []
            for cond in clause.get("conditions") or []:
                fld = cond.get("field")
                if fld == "value":
                    if "matches" not in cond:
                        raise IngestError(f"rule {name!r} clause #{ci}: value conditions need 'matches'")
                    try:
                        pat = re.compile(cond["matches"], re.IGNORECASE)
                    except re.error as exc:
                        raise IngestError(f"rule {name!r} clause #{ci}: bad regex: {exc}") from None
                    conds.append(_Condition("value", pattern=pat))
                elif fld in _KEY_FIELD_CONDITIONS:
                    if "equals" not in cond:
                        raise IngestError(f"rule {name!r} clause #{ci}: {fld} conditions need 'equals'")
                    want = str(cond["equals"]).strip()
                    if fld == "domain":
                        want = want.upper()
                    conds.append(_Condition(fld, equals=want))
                else:
                    raise IngestError(f"rule {name!r} clause #{ci}: unknown field {fld!r}")
            if not conds:
                raise IngestError(f"rule {name!r} clause #{ci}: needs at least one condition")
            clauses.append(tuple(conds))
        rules.append(DerivedEventRule(name, tuple(clauses)))
    return rules


def apply_derived_rules(record: RawRecord, rules: Sequence[DerivedEventRule]) -> list[EventKey]:
    """DERIVED keys triggered by this record, in rule-file order."""
    return [r.derived_key() for r in rules if r.matches(record)]


def parse_record_line(line: str, lineno: int) -> RawRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise IngestError(f"line {lineno}: invalid JSON: {exc}") from None
    try:
        pid = obj["patient_id"]
        date_text = obj["date"]
        domain = obj["domain"]
        code = obj["code"]
    except KeyError as exc:
        raise IngestError(f"line {lineno}: missing required field {exc}") from None
    if not isinstance(pid, str) or not pid:
        raise IngestError(f"line {lineno}: patient_id must be a non-empty string")
    # Sub-day timestamps are truncated to the date.
    if isinstance(date_text, str) and len(date_text) > 10 and date_text[10] in "T ":
        date_text = date_text[:10]
    try:
        day = parse_day(date_text)
        # validates the domain and trims the fields
        key = canonicalize_event_key(domain, code, obj.get("code_type") or "",
                                     obj.get("status") or "")
    except ModelError as exc:
        raise IngestError(f"line {lineno}: {exc}") from None
    value = obj.get("value")
    return RawRecord(pid, day, key.domain, key.code, key.code_type, key.status,
                     None if value is None else str(value))


def scan_records(
    records_path: str,
    rules: Sequence[DerivedEventRule] = (),
    strict: bool = True,
) -> tuple[dict[EventKey, int], list[tuple[str, EventKey, int]]]:
    """Scan a records file into a draft catalog and an occurrence list.

    The draft catalog maps each EventKey (natural and derived) to its
    distinct-patient count. In strict mode a malformed line aborts with
    its line number; otherwise bad lines are skipped.
    """
    occurrences: list[tuple[str, EventKey, int]] = []
    seen: dict[EventKey, set[str]] = {}
    for record in iter_records(records_path, strict=strict):
        keys = [record.natural_key()]
        keys.extend(apply_derived_rules(record, rules))
        for key in keys:
            occurrences.append((record.patient_id, key, record.day))
            seen.setdefault(key, set()).add(record.patient_id)
    return {k: len(v) for k, v in seen.items()}, occurrences


def iter_records(records_path: str, strict: bool = True) -> Iterable[RawRecord]:
    if not os.path.exists(records_path):
        raise IngestError(f"records file not found: {records_path}")
    with open(records_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield parse_record_line(line, lineno)
            except IngestError:
                if strict:
                    raise


def assign_event_ids(draft: dict[EventKey, int]) -> list[CatalogEntry]:
    """Rank events into dense 1-based IDs: higher patient count first,
    ties broken by ascending canonical key."""
    if not draft:
        raise IngestError("cannot assign event ids: no events scanned")
    ranked = sorted(draft.items(), key=lambda kv: (-kv[1], kv[0].canonical_bytes()))
    return [
        CatalogEntry(event_id=i, key=key, patient_count=count, label=default_label(key))
        for i, (key, count) in enumerate(ranked, start=1)
    ]


def build_event_time(
    occurrences: Iterable[tuple[str, EventKey, int]],
    catalog: Sequence[CatalogEntry],
) -> list[EventTimeDoc]:
    """Group occurrences into one doc per (patient, event); times deduplicated,
    strictly ascending. In-memory reference path; run_ingest streams instead."""
    by_key = {e.key: e.event_id for e in catalog}
    grouped: dict[tuple[str, int], set[int]] = {}
    for pid, key, day in occurrences:
        try:
            eid = by_key[key]
        except KeyError:
            raise IngestError(f"occurrence references event missing from catalog: {key.display()}") from None
        grouped.setdefault((pid, eid), set()).add(day)
    return [
        EventTimeDoc(pid, eid, tuple(sorted(days)))
        for (pid, eid), days in sorted(grouped.items())
    ]


# ---------------------------------------------------------------------------
# Streaming pipeline


class _ColumnarScan:
    """Occurrences in columnar form with interned patient/key tables."""

    def __init__(self) -> None:
        self.patient_ids: list[str] = []
        self._patient_idx: dict[str, int] = {}
        self.keys: list[EventKey] = []
        self._key_idx: dict[EventKey, int] = {}
        self.occ_patient = array("i")
        self.occ_key = array("i")
        self.occ_day = array("i")
        self.records = 0
        self.skipped = 0

    def _patient(self, pid: str) -> int:
        idx = self._patient_idx.get(pid)
        if idx is None:
            idx = len(self.patient_ids)
            self._patient_idx[pid] = idx
            self.patient_ids.append(pid)
        return idx

    def key(self, key: EventKey) -> int:
        idx = self._key_idx.get(key)
        if idx is None:
            idx = len(self.keys)
            self._key_idx[key] = idx
            self.keys.append(key)
        return idx

    def add(self, pid: str, key_idx: int, day: int) -> None:
        self.occ_patient.append(self._patient(pid))
        self.occ_key.append(key_idx)
        self.occ_day.append(day)


def _scan_columnar(records_path: str, rules: Sequence[DerivedEventRule], strict: bool) -> _ColumnarScan:
    scan = _ColumnarScan()
    # Records repeat keys and dates heavily; intern both per raw tuple.
    key_cache: dict[tuple, int] = {}
    day_cache: dict[str, int] = {}
    if not os.path.exists(records_path):
        raise IngestError(f"records file not found: {records_path}")
    with open(records_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                pid = obj["patient_id"]
                if not isinstance(pid, str) or not pid:
                    raise IngestError(f"line {lineno}: patient_id must be a non-empty string")
                date_text = obj["date"]
                if len(date_text) > 10 and date_text[10] in "T ":
                    date_text = date_text[:10]
                day = day_cache.get(date_text)
                if day is None:
                    day = parse_day(date_text)
                    day_cache[date_text] = day
                raw_key = (obj["domain"], obj["code"], obj.get("code_type") or "",
                           obj.get("status") or "")
                key_idx = key_cache.get(raw_key)
                if key_idx is None:
                    key_idx = scan.key(canonicalize_event_key(*raw_key))
                    key_cache[raw_key] = key_idx
                scan.add(pid, key_idx, day)
                if rules:
                    record = RawRecord(pid, day, *raw_key,
                                       None if obj.get("value") is None else str(obj.get("value")))
                    for dkey in apply_derived_rules(record, rules):
                        scan.add(pid, scan.key(dkey), day)
                scan.records += 1
            except (IngestError, ModelError, KeyError, TypeError, json.JSONDecodeError) as exc:
                if strict:
                    if isinstance(exc, IngestError):
                        raise
                    if isinstance(exc, KeyError):
                        raise IngestError(f"line {lineno}: missing required field {exc}") from None
                    raise IngestError(f"line {lineno}: {exc}") from None
                scan.skipped += 1
    if scan.records == 0:
        raise IngestError(f"records file {records_path} contains no valid records")
    return scan


def run_ingest(
    records_path: str,
    out_dir: str,
    rules_path: Optional[str] = None,
    strict: bool = True,
) -> dict:
    """Full ingest: scan records, build catalog + patient table, write the
    event-time segments and a manifest into out_dir. Returns the summary."""
    rules = load_rules(rules_path) if rules_path else []
    scan = _scan_columnar(records_path, rules, strict)
    os.makedirs(out_dir, exist_ok=True)

    # Final patient table is bytewise sorted so that index order == id order.
    order = sorted(range(len(scan.patient_ids)), key=lambda i: scan.patient_ids[i])
    remap = np.empty(len(order), dtype=np.int64)
    for new_idx, old_idx in enumerate(order):
        remap[old_idx] = new_idx
    patients = [scan.patient_ids[i] for i in order]

    occ_p = remap[np.frombuffer(scan.occ_patient, dtype=np.int32)]
    occ_k = np.frombuffer(scan.occ_key, dtype=np.int32).astype(np.int64)
    occ_d = np.frombuffer(scan.occ_day, dtype=np.int32).astype(np.int64)

    n_patients = len(patients)
    n_keys = len(scan.keys)

    # Distinct patients per event key.
    pair = occ_k * n_patients + occ_p
    uniq_pairs = np.unique(pair)
    counts = np.bincount((uniq_pairs // n_patients).astype(np.int64), minlength=n_keys)
    draft = {key: int(counts[i]) for i, key in enumerate(scan.keys)}
    catalog = assign_event_ids(draft)
    key_to_eid = {e.key: e.event_id for e in catalog}
    eid_of_keyidx = np.array([key_to_eid[k] for k in scan.keys], dtype=np.int64)

    # Unique (patient, event, day) triples, packed for a single sort.
    occ_e = eid_of_keyidx[occ_k]
    day_span = int(occ_d.max()) - MIN_DAY + 1
    n_events = len(catalog)
    if (n_patients * (n_events + 1) + n_events) * day_span >= (1 << 63):
        raise IngestError("corpus too large for packed event-time sorting")
    packed = (occ_p * (n_events + 1) + occ_e) * day_span + (occ_d - MIN_DAY)
    triples = np.unique(packed)
    days_col = (triples % day_span + MIN_DAY).astype(np.int32)
    pe = triples // day_span
    events_col = (pe % (n_events + 1)).astype(np.int64)
    patients_col = (pe // (n_events + 1)).astype(np.int64)

    files: list[dict] = []
    et_docs = _write_event_time(out_dir, patients_col, events_col, days_col,
                                n_events, files, by_event=False)
    _write_event_time(out_dir, patients_col, events_col, days_col,
                      n_events, files, by_event=True)

    store.write_patients(out_dir, patients)
    store.write_catalog(out_dir, catalog)

    rules_hash = None
    if rules_path:
        with open(rules_path, "rb") as fh:
            rules_hash = hashlib.blake2b(fh.read(), digest_size=16).hexdigest()

    manifest = {
        "format_version": store.FORMAT_VERSION,
        "counts": {
            "patients": n_patients,
            "events": n_events,
            "records": scan.records,
            "skipped": scan.skipped,
            "occurrences": int(triples.size),
            "eventtime_docs": et_docs,
        },
        "build": {"modes": [], "max_abs_diff": None},
        "params": {"strict": strict, "rules_hash": rules_hash, "rule_count": len(rules)},
        "files": files,
    }
    store.write_manifest(out_dir, manifest)
    return manifest


def _write_event_time(out_dir: str, patients_col: np.ndarray, events_col: np.ndarray,
                      days_col: np.ndarray, n_events: int, files: list[dict],
                      by_event: bool) -> int:
    if by_event:
        spec = store.EVENT_TIME_BY_EVENT
        group = events_col * (int(patients_col.max()) + 1) + patients_col
        order = np.argsort(group, kind="stable")
        patients_col = patients_col[order]
        events_col = events_col[order]
        days_col = days_col[order]
        group = group[order]
    else:
        spec = store.EVENT_TIME
        group = patients_col * (n_events + 1) + events_col
        # already sorted by (patient, event, day) from the packed unique
    boundaries = np.flatnonzero(np.diff(group)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [len(group)]))
    writer = SegmentWriter(out_dir, spec)
    for s, e in zip(starts, ends):
        pidx = int(patients_col[s])
        eid = int(events_col[s])
        days = days_col[s:e]
        if by_event:
            key, extra = store.encode_event_time_by_event(eid, pidx, days)
        else:
            key, extra = store.encode_event_time(pidx, eid, days)
        writer.add(key, extra)
    files.extend(writer.finish())
    return len(starts)
