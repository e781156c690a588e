"""Core domain types: events, day stamps, relations, and the event catalog.

Everything here is an immutable value type shared by the ingest, index,
and query layers. Times are calendar dates stored as integer days since
1970-01-01; two events co-occur when they fall on the same date.
"""

from __future__ import annotations

import datetime
import enum
from dataclasses import dataclass

# Canonical field separator inside an EventKey. Not allowed in any field.
UNIT_SEP = "\x1f"

# Display separator used by the CLI/API rendering of an EventKey.
DISPLAY_SEP = ":"

EPOCH = datetime.date(1970, 1, 1)
MIN_DAY = (datetime.date(1900, 1, 1) - EPOCH).days
MAX_DAY = (datetime.date(2100, 12, 31) - EPOCH).days

DOMAINS = (
    "DIAGNOSIS",
    "LAB",
    "MEDICATION",
    "PROCEDURE",
    "OBSERVATION",
    "IMMUNIZATION",
    "DERIVED",
)


class ModelError(ValueError):
    """Invalid value for one of the core domain types."""


class Relation(enum.IntEnum):
    """Pairwise temporal relation between two point events.

    BEFORE and AFTER are duals under operand swap; CO_OCCUR is symmetric
    (same calendar date) and is folded into both directional relations.
    """

    BEFORE = 0
    AFTER = 1
    CO_OCCUR = 2

    @classmethod
    def parse(cls, text: str) -> "Relation":
        try:
            return _RELATION_NAMES[text.strip().lower()]
        except KeyError:
            raise ModelError(
                f"unknown relation {text!r}; expected one of before, after, co-occur"
            ) from None


_RELATION_NAMES = {
    "before": Relation.BEFORE,
    "after": Relation.AFTER,
    "co-occur": Relation.CO_OCCUR,
    "cooccur": Relation.CO_OCCUR,
    "co_occur": Relation.CO_OCCUR,
}


def parse_day(date_text: str) -> int:
    """Parse an ISO-8601 calendar date into days since 1970-01-01.

    Only plain YYYY-MM-DD is accepted; range 1900-01-01..2100-12-31.
    """
    text = date_text.strip()
    parts = text.split("-")
    if len(parts) != 3 or len(parts[0]) != 4 or len(parts[1]) != 2 or len(parts[2]) != 2:
        raise ModelError(f"malformed date {date_text!r}: expected YYYY-MM-DD")
    try:
        year, month, day = int(parts[0]), int(parts[1]), int(parts[2])
    except ValueError:
        raise ModelError(f"malformed date {date_text!r}: non-numeric field") from None
    try:
        d = datetime.date(year, month, day)
    except ValueError as exc:
        raise ModelError(f"invalid calendar date {date_text!r}: {exc}") from None
    stamp = (d - EPOCH).days
    if not MIN_DAY <= stamp <= MAX_DAY:
        raise ModelError(f"date {date_text!r} outside supported range 1900-01-01..2100-12-31")
    return stamp


def format_day(stamp: int) -> str:
    """Inverse of parse_day."""
    if not MIN_DAY <= stamp <= MAX_DAY:
        raise ModelError(f"day stamp {stamp} outside supported range")
    return (EPOCH + datetime.timedelta(days=int(stamp))).isoformat()


@dataclass(frozen=True, order=True)
class EventKey:
    """Canonical identity of a queryable event.

    Equality and ordering are bytewise on the canonical form: the four
    fields joined by the unit separator. Empty code_type/status are
    significant (they make a distinct key).
    """

    domain: str
    code: str
    code_type: str = ""
    status: str = ""

    def canonical(self) -> str:
        return UNIT_SEP.join((self.domain, self.code, self.code_type, self.status))

    def canonical_bytes(self) -> bytes:
        return self.canonical().encode("utf-8")

    def display(self) -> str:
        """Render for CLI/API use, ':'-separated with '\\:' escaping."""
        return DISPLAY_SEP.join(_escape_display(f) for f in
                                (self.domain, self.code, self.code_type, self.status))


def canonicalize_event_key(domain: str, code: str, code_type: str = "", status: str = "") -> EventKey:
    """Build the canonical EventKey for raw record fields.

    The domain must be one of the known categories (matched
    case-insensitively, stored uppercase); the other fields are trimmed
    but otherwise preserved case-sensitively.
    """
    dom = domain.strip().upper()
    if dom not in DOMAINS:
        raise ModelError(
            f"unknown event domain {domain!r}; accepted domains: {', '.join(DOMAINS)}"
        )
    fields = (code.strip(), code_type.strip(), status.strip())
    for f in fields:
        if UNIT_SEP in f:
            raise ModelError("event key fields may not contain the unit separator (0x1F)")
    return EventKey(dom, *fields)


def _escape_display(field: str) -> str:
    return field.replace("\\", "\\\\").replace(DISPLAY_SEP, "\\" + DISPLAY_SEP)


def parse_event_key_text(text: str) -> EventKey:
    """Parse the display rendering back into an EventKey."""
    fields: list[str] = []
    cur: list[str] = []
    it = iter(text)
    for ch in it:
        if ch == "\\":
            nxt = next(it, None)
            if nxt is None:
                raise ModelError(f"dangling escape in event key text {text!r}")
            cur.append(nxt)
        elif ch == DISPLAY_SEP:
            fields.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    fields.append("".join(cur))
    if len(fields) != 4:
        raise ModelError(
            f"event key text {text!r} must have 4 ':'-separated fields (got {len(fields)})"
        )
    return canonicalize_event_key(*fields)


@dataclass(frozen=True)
class CatalogEntry:
    """One catalog row: an event, its population count, and its assigned ID.

    IDs are dense and 1-based; more patients means a smaller ID, with ties
    broken by ascending canonical key. ID 0 is reserved as invalid.
    """

    event_id: int
    key: EventKey
    patient_count: int
    label: str

    def to_json_dict(self) -> dict:
        return {
            "event_id": self.event_id,
            "domain": self.key.domain,
            "code": self.key.code,
            "code_type": self.key.code_type,
            "status": self.key.status,
            "patient_count": self.patient_count,
            "label": self.label,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "CatalogEntry":
        key = EventKey(d["domain"], d["code"], d.get("code_type", ""), d.get("status", ""))
        return cls(int(d["event_id"]), key, int(d["patient_count"]), d.get("label", ""))


def default_label(key: EventKey) -> str:
    parts = [key.domain, key.code]
    if key.code_type:
        parts.append(f"({key.code_type})")
    if key.status:
        parts.append(key.status)
    return " ".join(parts)
