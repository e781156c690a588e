"""Immutable on-disk document store.

A data directory holds:

  manifest.json   versions, counts, build parameters, per-file checksums
  catalog.jsonl   one catalog entry per line, ordered by event_id
  patients.txt    one patient id per line, bytewise sorted (line no = index)
  <kind>.<nnnn>.seg  binary segment shards

Segment layout: length-prefixed records sorted strictly ascending by a
fixed-width big-endian key, a footer of (key, offset) samples every 4096
records, and trailing 8-byte checksums. Patient posting lists are stored
as uint32 indexes into patients.txt; because that file is bytewise
sorted, index order equals bytewise PatientId order.

Everything is write-once: open() never mutates the directory, and any
number of readers may share one handle.
"""

from __future__ import annotations

import hashlib
import io
import json
import mmap
import os
import struct
from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .model import CatalogEntry, Relation

FORMAT_VERSION = 1
SAMPLE_EVERY = 4096
DEFAULT_SHARD_BYTES = 256 << 20
DAY_DIFF_BIAS = 1 << 31

_TRAILER = struct.Struct("<QQQ8s")  # footer_checksum, body_checksum, footer_len, magic
_MAGIC = b"TELIISEG"
_LEN = struct.Struct("<I")


class StoreError(Exception):
    """Missing, corrupt, or inconsistent store files."""


def _checksum64(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


# ---------------------------------------------------------------------------
# Segment kinds and their key codecs


@dataclass(frozen=True)
class KindSpec:
    stem: str
    key_size: int


EVENT_TIME = KindSpec("eventtime", 8)            # (patient u32, event u32)
EVENT_TIME_BY_EVENT = KindSpec("eventtime_by_event", 8)  # (event u32, patient u32)
RELATION = KindSpec("relation", 9)               # (anchor u32, rel u8, related u32)
RELATION_BY_RELATED = KindSpec("relation_by_related", 9)  # (rel u8, related u32, anchor u32)
TIMEDIFF = KindSpec("timediff", 12)              # (anchor u32, related u32, biased diff u32)
TIMEDIFF_BY_RELATED = KindSpec("timediff_by_related", 12)  # (related u32, biased diff u32, anchor u32)
ELII = KindSpec("elii", 4)                       # (event u32)

ALL_KINDS = (
    EVENT_TIME,
    EVENT_TIME_BY_EVENT,
    RELATION,
    RELATION_BY_RELATED,
    TIMEDIFF,
    TIMEDIFF_BY_RELATED,
    ELII,
)

_K_PE = struct.Struct(">II")
_K_REL = struct.Struct(">IBI")
_K_REL2 = struct.Struct(">BII")
_K_TD = struct.Struct(">III")
_K_E = struct.Struct(">I")


def key_event_time(patient_idx: int, event_id: int) -> bytes:
    return _K_PE.pack(patient_idx, event_id)


def key_event_time_by_event(event_id: int, patient_idx: int) -> bytes:
    return _K_PE.pack(event_id, patient_idx)


def key_relation(anchor: int, relation: int, related: int) -> bytes:
    return _K_REL.pack(anchor, relation, related)


def key_relation_by_related(relation: int, related: int, anchor: int) -> bytes:
    return _K_REL2.pack(relation, related, anchor)


def key_timediff(anchor: int, related: int, day_diff: int) -> bytes:
    return _K_TD.pack(anchor, related, day_diff + DAY_DIFF_BIAS)


def key_timediff_by_related(related: int, day_diff: int, anchor: int) -> bytes:
    return _K_TD.pack(related, day_diff + DAY_DIFF_BIAS, anchor)


def key_elii(event_id: int) -> bytes:
    return _K_E.pack(event_id)


# ---------------------------------------------------------------------------
# Documents as returned by lookups


@dataclass(frozen=True)
class RelationDoc:
    """Posting list for (anchor, relation, related).

    `patients` is a sorted uint32 array of patient-table indexes; resolve
    to PatientId strings via StoreHandle.patient_ids().
    """

    anchor: int
    relation: Relation
    related: int
    patients: np.ndarray


@dataclass(frozen=True)
class TimeDiffDoc:
    """Posting list for (anchor, related, exact signed day difference)."""

    anchor: int
    related: int
    day_diff: int
    patients: np.ndarray


@dataclass(frozen=True)
class EliiDoc:
    """Per-event posting list: every patient with at least one occurrence."""

    event: int
    patients: np.ndarray


@dataclass(frozen=True)
class EventTimeDoc:
    """One patient x one event with its sorted, deduplicated day stamps."""

    patient_id: str
    event_id: int
    times: tuple[int, ...]


# ---------------------------------------------------------------------------
# Segment writer


class SegmentWriter:
    """Writes one segment kind as a series of sorted shard files."""

    def __init__(self, data_dir: str, spec: KindSpec, shard_bytes: int = DEFAULT_SHARD_BYTES):
        self.data_dir = data_dir
        self.spec = spec
        self.shard_bytes = shard_bytes
        self.files: list[dict] = []
        self._fh: Optional[io.BufferedWriter] = None
        self._reset_shard_state()
        self.total_records = 0

    def _reset_shard_state(self) -> None:
        self._body_len = 0
        self._count = 0
        self._samples: list[tuple[bytes, int]] = []
        self._first_key = b""
        self._prev_key = b""
        self._hash = hashlib.blake2b(digest_size=8)

    def _shard_name(self) -> str:
        return f"{self.spec.stem}.{len(self.files):04d}.seg"

    def _open_shard(self) -> None:
        self._name = self._shard_name()
        path = os.path.join(self.data_dir, self._name)
        self._fh = open(path, "wb", buffering=4 << 20)
        self._reset_shard_state()

    def add(self, key: bytes, extra: bytes = b"") -> tuple[int, int]:
        """Append one record; returns (shard_no, byte offset) of the record."""
        if len(key) != self.spec.key_size:
            raise StoreError(f"bad key size for {self.spec.stem}: {len(key)}")
        if self._fh is None:
            self._open_shard()
        elif self._body_len >= self.shard_bytes:
            self._finish_shard()
            self._open_shard()
        if self._prev_key and key <= self._prev_key:
            raise StoreError(f"{self.spec.stem}: keys not strictly ascending")
        if not self._count:
            self._first_key = key
        if self._count % SAMPLE_EVERY == 0:
            self._samples.append((key, self._body_len))
        rec = _LEN.pack(len(key) + len(extra)) + key + extra
        self._fh.write(rec)
        self._hash.update(rec)
        offset = self._body_len
        shard_no = len(self.files)
        self._body_len += len(rec)
        self._count += 1
        self.total_records += 1
        self._prev_key = key
        return shard_no, offset

    def _finish_shard(self) -> None:
        assert self._fh is not None
        footer = bytearray()
        footer += struct.pack("<IQQ", self.spec.key_size, self._count, self._body_len)
        ks = self.spec.key_size
        footer += self._first_key if self._first_key else b"\x00" * ks
        footer += self._prev_key if self._prev_key else b"\x00" * ks
        footer += struct.pack("<Q", len(self._samples))
        for key, off in self._samples:
            footer += key
            footer += struct.pack("<Q", off)
        footer = bytes(footer)
        footer_ck = _checksum64(footer)
        body_ck = int.from_bytes(self._hash.digest(), "little")
        self._fh.write(footer)
        self._fh.write(_TRAILER.pack(footer_ck, body_ck, len(footer), _MAGIC))
        self._fh.close()
        file_bytes = self._body_len + len(footer) + _TRAILER.size
        digest = hashlib.blake2b(
            footer_ck.to_bytes(8, "little") + body_ck.to_bytes(8, "little"),
            digest_size=16,
        ).hexdigest()
        self.files.append({
            "name": self._name,
            "kind": self.spec.stem,
            "bytes": file_bytes,
            "records": self._count,
            "checksum": digest,
        })
        self._fh = None

    def finish(self) -> list[dict]:
        """Close the writer; returns manifest entries (empty if no records)."""
        if self._fh is not None:
            if self._count:
                self._finish_shard()
            else:
                self._fh.close()
                os.unlink(os.path.join(self.data_dir, self._name))
                self._fh = None
        return self.files


# ---------------------------------------------------------------------------
# Segment reader


class _Shard:
    def __init__(self, path: str, spec: KindSpec):
        self.path = path
        self.spec = spec
        try:
            fh = open(path, "rb")
        except OSError as exc:
            raise StoreError(f"cannot open segment {path}: {exc}") from None
        with fh:
            try:
                self.mm = mmap.mmap(fh.fileno(), 0, access=mmap.ACCESS_READ)
            except ValueError:
                raise StoreError(f"segment {path} is empty or truncated") from None
        size = len(self.mm)
        if size < _TRAILER.size:
            raise StoreError(f"segment {path} is truncated")
        footer_ck, body_ck, footer_len, magic = _TRAILER.unpack(self.mm[size - _TRAILER.size:])
        if magic != _MAGIC:
            raise StoreError(f"segment {path}: bad magic (corrupt or truncated file)")
        footer_start = size - _TRAILER.size - footer_len
        if footer_start < 0:
            raise StoreError(f"segment {path}: footer length exceeds file size")
        footer = self.mm[footer_start:size - _TRAILER.size]
        if _checksum64(footer) != footer_ck:
            raise StoreError(f"segment {path}: footer checksum mismatch")
        ks, count, body_len = struct.unpack_from("<IQQ", footer, 0)
        if ks != spec.key_size:
            raise StoreError(f"segment {path}: key size {ks} != expected {spec.key_size}")
        if body_len != footer_start:
            raise StoreError(f"segment {path}: body length mismatch (truncated?)")
        off = 20
        self.first_key = bytes(footer[off:off + ks]); off += ks
        self.last_key = bytes(footer[off:off + ks]); off += ks
        (nsamples,) = struct.unpack_from("<Q", footer, off); off += 8
        self.sample_keys: list[bytes] = []
        self.sample_offs: list[int] = []
        for _ in range(nsamples):
            self.sample_keys.append(bytes(footer[off:off + ks])); off += ks
            self.sample_offs.append(struct.unpack_from("<Q", footer, off)[0]); off += 8
        self.count = count
        self.body_len = body_len
        self.body_checksum = body_ck

    def verify_body(self) -> None:
        if _checksum64(self.mm[:self.body_len]) != self.body_checksum:
            raise StoreError(f"segment {self.path}: body checksum mismatch")

    def scan(self, key_lo: bytes, key_hi: bytes) -> Iterator[tuple[bytes, memoryview, int]]:
        """Yield (key, record payload view, record offset) for key_lo <= key <= key_hi."""
        if not self.count or key_hi < self.first_key or key_lo > self.last_key:
            return
        i = bisect_right(self.sample_keys, key_lo) - 1
        off = self.sample_offs[i] if i >= 0 else 0
        mm, ks, body_len = self.mm, self.spec.key_size, self.body_len
        view = memoryview(mm)
        while off < body_len:
            (rec_len,) = _LEN.unpack_from(mm, off)
            key = mm[off + 4:off + 4 + ks]
            if key > key_hi:
                return
            if key >= key_lo:
                yield key, view[off + 4:off + 4 + rec_len], off
            off += 4 + rec_len

    def record_at(self, off: int) -> memoryview:
        (rec_len,) = _LEN.unpack_from(self.mm, off)
        return memoryview(self.mm)[off + 4:off + 4 + rec_len]


class SegmentSet:
    """All shards of one kind, globally sorted."""

    def __init__(self, data_dir: str, spec: KindSpec, names: Sequence[str]):
        self.spec = spec
        self.shards = [_Shard(os.path.join(data_dir, n), spec) for n in names]
        self.count = sum(s.count for s in self.shards)

    def scan(self, key_lo: bytes, key_hi: bytes) -> Iterator[tuple[bytes, memoryview]]:
        for shard in self.shards:
            for key, payload, _ in shard.scan(key_lo, key_hi):
                yield key, payload

    def get(self, key: bytes) -> Optional[memoryview]:
        for shard in self.shards:
            if shard.count and shard.first_key <= key <= shard.last_key:
                for k, payload, _ in shard.scan(key, key):
                    if k == key:
                        return payload
        return None

    def record_at(self, shard_no: int, off: int) -> memoryview:
        return self.shards[shard_no].record_at(off)

    def scan_all(self) -> Iterator[tuple[bytes, memoryview]]:
        lo = b"\x00" * self.spec.key_size
        hi = b"\xff" * self.spec.key_size
        return self.scan(lo, hi)


# ---------------------------------------------------------------------------
# Manifest and directory plumbing


def write_manifest(data_dir: str, manifest: dict) -> None:
    path = os.path.join(data_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(data_dir: str) -> dict:
    path = os.path.join(data_dir, "manifest.json")
    if not os.path.exists(path):
        raise StoreError(f"manifest missing: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise StoreError(f"manifest corrupt: {path}: {exc}") from None


def write_catalog(data_dir: str, entries: Sequence[CatalogEntry]) -> None:
    path = os.path.join(data_dir, "catalog.jsonl")
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(e.to_json_dict(), sort_keys=True, ensure_ascii=False))
            fh.write("\n")


def read_catalog(data_dir: str) -> list[CatalogEntry]:
    path = os.path.join(data_dir, "catalog.jsonl")
    if not os.path.exists(path):
        raise StoreError(f"catalog missing: {path}")
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                entries.append(CatalogEntry.from_json_dict(json.loads(line)))
    return entries


def write_patients(data_dir: str, patients: Sequence[str]) -> None:
    path = os.path.join(data_dir, "patients.txt")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in patients:
            fh.write(p)
            fh.write("\n")


def read_patients(data_dir: str) -> list[str]:
    path = os.path.join(data_dir, "patients.txt")
    if not os.path.exists(path):
        raise StoreError(f"patient table missing: {path}")
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.rstrip("\n")]


# ---------------------------------------------------------------------------
# Read handle


class StoreHandle:
    """Read-only view over a built data directory.

    Safe to share across threads; all lookups are reproducible and answer
    exactly what a linear scan of the corresponding segment would.
    """

    def __init__(self, data_dir: str):
        self.data_dir = data_dir
        self.manifest = read_manifest(data_dir)
        if self.manifest.get("format_version") != FORMAT_VERSION:
            raise StoreError(
                f"unsupported format_version in {data_dir}/manifest.json: "
                f"{self.manifest.get('format_version')!r}"
            )
        self.catalog = read_catalog(data_dir)
        self.patients = read_patients(data_dir)
        self.by_id = {e.event_id: e for e in self.catalog}
        self.by_canonical = {e.key.canonical(): e for e in self.catalog}
        if len(self.catalog) != self.manifest["counts"]["events"]:
            raise StoreError(f"catalog size disagrees with manifest in {data_dir}")
        if len(self.patients) != self.manifest["counts"]["patients"]:
            raise StoreError(f"patient table size disagrees with manifest in {data_dir}")
        self._patients_arr = np.array(self.patients)
        by_kind: dict[str, list[str]] = {}
        for f in sorted(self.manifest.get("files", []), key=lambda f: f["name"]):
            by_kind.setdefault(f["kind"], []).append(f["name"])
        self._sets: dict[str, SegmentSet] = {}
        for spec in ALL_KINDS:
            names = by_kind.get(spec.stem, [])
            if names:
                self._sets[spec.stem] = SegmentSet(data_dir, spec, names)

    # -- general -----------------------------------------------------------

    @property
    def max_abs_diff(self) -> Optional[int]:
        return self.manifest.get("build", {}).get("max_abs_diff")

    def has_kind(self, spec: KindSpec) -> bool:
        return spec.stem in self._sets

    def _need(self, spec: KindSpec) -> SegmentSet:
        try:
            return self._sets[spec.stem]
        except KeyError:
            pass
        # A built mode may legitimately have no documents (e.g. no patient
        # has two events); that is an empty index, not a missing one.
        owning_mode = "elii" if spec is ELII else "telii"
        if spec in (EVENT_TIME, EVENT_TIME_BY_EVENT) or \
                owning_mode in (self.manifest.get("build", {}).get("modes") or []):
            empty = SegmentSet(self.data_dir, spec, [])
            self._sets[spec.stem] = empty
            return empty
        raise StoreError(
            f"store at {self.data_dir} has no {spec.stem} segments; "
            f"build the matching index mode first"
        )

    def patient_ids(self, idxs: np.ndarray | Sequence[int]) -> list[str]:
        arr = np.asarray(idxs, dtype=np.int64)
        return [str(x) for x in self._patients_arr[arr]] if arr.size else []

    def patient_index(self, patient_id: str) -> Optional[int]:
        i = int(np.searchsorted(self._patients_arr, patient_id))
        if i < len(self.patients) and self.patients[i] == patient_id:
            return i
        return None

    # -- relation access paths ----------------------------------------------

    def get_relation(self, anchor: int, relation: Relation, related: int) -> Optional[RelationDoc]:
        payload = self._need(RELATION).get(key_relation(anchor, relation, related))
        if payload is None:
            return None
        return _decode_relation(payload)

    def scan_by_anchor(self, anchor: int, relation: Relation) -> Iterator[RelationDoc]:
        lo = key_relation(anchor, relation, 0)
        hi = key_relation(anchor, relation, 0xFFFFFFFF)
        for _, payload in self._need(RELATION).scan(lo, hi):
            yield _decode_relation(payload)

    def scan_by_related(self, relation: Relation, related: int) -> Iterator[RelationDoc]:
        primary = self._need(RELATION)
        for _, _, shard_no, off in self._scan_related_pointers(relation, related):
            yield _decode_relation(primary.record_at(shard_no, off))

    def scan_by_related_counts(self, relation: Relation, related: int) -> Iterator[tuple[int, int]]:
        """(anchor, patient count) pairs without fetching posting lists."""
        for anchor, n, _, _ in self._scan_related_pointers(relation, related):
            yield anchor, n

    def _scan_related_pointers(self, relation: Relation, related: int):
        lo = key_relation_by_related(relation, related, 0)
        hi = key_relation_by_related(relation, related, 0xFFFFFFFF)
        for key, payload in self._need(RELATION_BY_RELATED).scan(lo, hi):
            _, _, anchor = _K_REL2.unpack(key)
            shard_no, off, n = struct.unpack_from("<IQI", payload, len(key))
            yield anchor, n, shard_no, off

    # -- time-difference access paths ----------------------------------------

    def range_timediff(self, anchor: int, related: Optional[int],
                       d_lo: int, d_hi: int) -> Iterator[TimeDiffDoc]:
        if d_lo > d_hi:
            raise StoreError(f"inverted day-difference range [{d_lo}, {d_hi}]")
        tds = self._need(TIMEDIFF)
        if related is not None:
            lo = key_timediff(anchor, related, d_lo)
            hi = key_timediff(anchor, related, d_hi)
            for _, payload in tds.scan(lo, hi):
                yield _decode_timediff(payload)
        else:
            lo = key_timediff(anchor, 0, -DAY_DIFF_BIAS)
            hi = key_timediff(anchor, 0xFFFFFFFF, 0xFFFFFFFF - DAY_DIFF_BIAS)
            lo_b, hi_b = d_lo + DAY_DIFF_BIAS, d_hi + DAY_DIFF_BIAS
            for key, payload in tds.scan(lo, hi):
                d_biased = struct.unpack_from(">I", key, 8)[0]
                if lo_b <= d_biased <= hi_b:
                    yield _decode_timediff(payload)

    def range_timediff_by_related(self, related: int, d_lo: int, d_hi: int) -> Iterator[TimeDiffDoc]:
        if d_lo > d_hi:
            raise StoreError(f"inverted day-difference range [{d_lo}, {d_hi}]")
        primary = self._need(TIMEDIFF)
        lo = key_timediff_by_related(related, d_lo, 0)
        hi = key_timediff_by_related(related, d_hi, 0xFFFFFFFF)
        for key, payload in self._need(TIMEDIFF_BY_RELATED).scan(lo, hi):
            shard_no, off, _ = struct.unpack_from("<IQI", payload, len(key))
            yield _decode_timediff(primary.record_at(shard_no, off))

    # -- event-time and per-event posting lists ------------------------------

    def get_event_time(self, patient_id: str, event: int) -> Optional[EventTimeDoc]:
        pidx = self.patient_index(patient_id)
        if pidx is None:
            return None
        payload = self._need(EVENT_TIME).get(key_event_time(pidx, event))
        if payload is None:
            return None
        days = _decode_days(payload)
        return EventTimeDoc(patient_id, event, tuple(int(d) for d in days))

    def scan_event_time_by_event(self, event: int) -> Iterator[EventTimeDoc]:
        for pidx, days in self.scan_event_times_raw(event):
            yield EventTimeDoc(self.patients[pidx], event, tuple(int(d) for d in days))

    def scan_event_times_raw(self, event: int) -> Iterator[tuple[int, np.ndarray]]:
        """(patient index, day array) stream for one event, patient-ordered."""
        lo = key_event_time_by_event(event, 0)
        hi = key_event_time_by_event(event, 0xFFFFFFFF)
        for key, payload in self._need(EVENT_TIME_BY_EVENT).scan(lo, hi):
            _, pidx = _K_PE.unpack(key)
            yield pidx, _decode_days(payload)

    def scan_event_time_all(self) -> Iterator[tuple[int, int, np.ndarray]]:
        for key, payload in self._need(EVENT_TIME).scan_all():
            pidx, event = _K_PE.unpack(key)
            yield pidx, event, _decode_days(payload)

    def get_elii(self, event: int) -> Optional[EliiDoc]:
        payload = self._need(ELII).get(key_elii(event))
        if payload is None:
            return None
        return EliiDoc(event, _decode_postings(payload, 4))

    def scan_elii(self) -> Iterator[EliiDoc]:
        for key, payload in self._need(ELII).scan_all():
            (event,) = _K_E.unpack(key)
            yield EliiDoc(event, _decode_postings(payload, 4))

    def scan_relation_all(self) -> Iterator[RelationDoc]:
        for _, payload in self._need(RELATION).scan_all():
            yield _decode_relation(payload)

    def scan_timediff_all(self) -> Iterator[TimeDiffDoc]:
        for _, payload in self._need(TIMEDIFF).scan_all():
            yield _decode_timediff(payload)


def open_store(data_dir: str) -> StoreHandle:
    """Open a built data directory, verifying footer checksums."""
    return StoreHandle(data_dir)


def _decode_postings(payload: memoryview, key_size: int) -> np.ndarray:
    (n,) = struct.unpack_from("<I", payload, key_size)
    start = key_size + 4
    return np.frombuffer(payload, dtype="<u4", count=n, offset=start)


def _decode_days(payload: memoryview) -> np.ndarray:
    (n,) = struct.unpack_from("<I", payload, 8)
    return np.frombuffer(payload, dtype="<i4", count=n, offset=12)


def _decode_relation(payload: memoryview) -> RelationDoc:
    anchor, rel, related = _K_REL.unpack_from(payload, 0)
    return RelationDoc(anchor, Relation(rel), related, _decode_postings(payload, 9))


def _decode_timediff(payload: memoryview) -> TimeDiffDoc:
    anchor, related, d_biased = _K_TD.unpack_from(payload, 0)
    return TimeDiffDoc(anchor, related, d_biased - DAY_DIFF_BIAS, _decode_postings(payload, 12))


# -- record encoders (used by the build pipeline) ---------------------------


def encode_event_time(patient_idx: int, event_id: int, days: np.ndarray) -> tuple[bytes, bytes]:
    key = key_event_time(patient_idx, event_id)
    return key, _LEN.pack(len(days)) + days.astype("<i4", copy=False).tobytes()


def encode_event_time_by_event(event_id: int, patient_idx: int, days: np.ndarray) -> tuple[bytes, bytes]:
    key = key_event_time_by_event(event_id, patient_idx)
    return key, _LEN.pack(len(days)) + days.astype("<i4", copy=False).tobytes()


def encode_posting_extra(patients: np.ndarray) -> bytes:
    return _LEN.pack(len(patients)) + patients.astype("<u4", copy=False).tobytes()


def encode_pointer_extra(shard_no: int, offset: int, count: int) -> bytes:
    return struct.pack("<IQI", shard_no, offset, count)
