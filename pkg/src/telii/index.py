"""Aggregate per-patient pair facts into global posting lists.

Two build paths share one contract:

  * build_relation_index / build_timediff_index / build_elii are direct
    in-memory aggregators over explicit fact streams (small inputs,
    reference semantics for tests);
  * run_build streams the whole corpus: per-patient facts are packed
    into int64 keys, spilled as sorted runs, k-way merged, and written
    out as segment files, so memory stays bounded regardless of how many
    billions of facts a corpus expands into.

Posting lists are keyed on the anchor (the less common, larger-ID event
of each pair) and store sorted patient indexes. Maintenance is
rebuild-only: there is no insert/update path.
"""

from __future__ import annotations

import io
import os
import shutil
import struct
from array import array
from typing import Iterable, Iterator, Mapping, Optional, Sequence

import numpy as np

from . import store
from .model import Relation
from .relate import PatientPairDiff, PatientPairRelation
from .store import (
    EliiDoc,
    EventTimeDoc,
    RelationDoc,
    SegmentWriter,
    TimeDiffDoc,
)

DEFAULT_SPILL_ENTRIES = 24_000_000
MERGE_CHUNK = 4_000_000

MODES = ("telii", "elii", "both")

_TELII_KINDS = (store.RELATION, store.RELATION_BY_RELATED,
                store.TIMEDIFF, store.TIMEDIFF_BY_RELATED)
_ELII_KINDS = (store.ELII,)


class BuildError(Exception):
    """Invalid build input or a violated build invariant."""


# ---------------------------------------------------------------------------
# In-memory aggregation (reference semantics)


def build_relation_index(
    facts: Iterable[tuple[str, PatientPairRelation]],
    patient_index: Mapping[str, int],
) -> list[RelationDoc]:
    """One RelationDoc per (anchor, relation, related) triple with >=1 patient."""
    acc: dict[tuple[int, Relation, int], set[int]] = {}
    for pid, pr in facts:
        if pr.anchor <= pr.related:
            raise BuildError(
                f"anchor orientation violated: anchor {pr.anchor} <= related {pr.related}"
            )
        if not (pr.has_before or pr.has_after or pr.has_cooccur):
            raise BuildError(f"pair ({pr.anchor}, {pr.related}) carries no relation")
        pidx = patient_index[pid]
        if pr.has_before:
            acc.setdefault((pr.anchor, Relation.BEFORE, pr.related), set()).add(pidx)
        if pr.has_after:
            acc.setdefault((pr.anchor, Relation.AFTER, pr.related), set()).add(pidx)
        if pr.has_cooccur:
            acc.setdefault((pr.anchor, Relation.CO_OCCUR, pr.related), set()).add(pidx)
    return [
        RelationDoc(a, rel, b, np.array(sorted(pats), dtype=np.uint32))
        for (a, rel, b), pats in sorted(acc.items())
    ]


def build_timediff_index(
    facts: Iterable[tuple[str, PatientPairDiff]],
    patient_index: Mapping[str, int],
) -> list[TimeDiffDoc]:
    """One TimeDiffDoc per (anchor, related, signed day difference)."""
    acc: dict[tuple[int, int, int], set[int]] = {}
    for pid, pd in facts:
        if pd.anchor <= pd.related:
            raise BuildError(
                f"anchor orientation violated: anchor {pd.anchor} <= related {pd.related}"
            )
        pidx = patient_index[pid]
        for d in pd.diffs:
            acc.setdefault((pd.anchor, pd.related, d), set()).add(pidx)
    return [
        TimeDiffDoc(a, b, d, np.array(sorted(pats), dtype=np.uint32))
        for (a, b, d), pats in sorted(acc.items())
    ]


def build_elii(
    event_time: Iterable[EventTimeDoc],
    patient_index: Mapping[str, int],
) -> list[EliiDoc]:
    """Per-event posting list of distinct patients."""
    acc: dict[int, set[int]] = {}
    for doc in event_time:
        acc.setdefault(doc.event_id, set()).add(patient_index[doc.patient_id])
    return [
        EliiDoc(event, np.array(sorted(pats), dtype=np.uint32))
        for event, pats in sorted(acc.items())
    ]


# ---------------------------------------------------------------------------
# Spill-sort machinery


class _SpillSorter:
    """Accumulates int64 facts, flushing sorted runs to disk."""

    def __init__(self, tmp_dir: str, stem: str, spill_entries: int):
        self.tmp_dir = tmp_dir
        self.stem = stem
        self.spill_entries = spill_entries
        self.paths: list[str] = []
        self._parts: list[np.ndarray] = []
        self._pending = 0
        self.total = 0

    def add(self, arr: np.ndarray) -> None:
        if not arr.size:
            return
        self._parts.append(arr)
        self._pending += arr.size
        self.total += arr.size
        if self._pending >= self.spill_entries:
            self._flush()

    def _flush(self) -> None:
        if not self._pending:
            return
        run = np.concatenate(self._parts) if len(self._parts) > 1 else self._parts[0]
        self._parts = []
        self._pending = 0
        run = np.sort(run)
        path = os.path.join(self.tmp_dir, f"{self.stem}.{len(self.paths):04d}.spill")
        run.astype("<i8", copy=False).tofile(path)
        self.paths.append(path)

    def finish(self) -> list[str]:
        self._flush()
        return self.paths


def merge_sorted_runs(paths: Sequence[str], chunk: int = MERGE_CHUNK) -> Iterator[np.ndarray]:
    """K-way merge of sorted little-endian int64 files into sorted chunks."""
    files = [open(p, "rb") for p in paths]
    bufs: list[Optional[np.ndarray]] = [None] * len(files)
    try:
        while True:
            for i, fh in enumerate(files):
                if fh is not None and (bufs[i] is None or not bufs[i].size):
                    data = np.fromfile(fh, dtype="<i8", count=chunk)
                    if data.size:
                        bufs[i] = data.astype(np.int64, copy=False)
                    else:
                        fh.close()
                        files[i] = None
                        bufs[i] = None
            live = [b for b in bufs if b is not None and b.size]
            if not live:
                return
            boundary = min(int(b[-1]) for b in live)
            pieces = []
            for i, b in enumerate(bufs):
                if b is None or not b.size:
                    continue
                cut = int(np.searchsorted(b, boundary, side="right"))
                if cut:
                    pieces.append(b[:cut])
                    bufs[i] = b[cut:]
            if len(pieces) == 1:
                yield pieces[0]
            else:
                merged = np.concatenate(pieces)
                merged.sort()
                yield merged
    finally:
        for fh in files:
            if fh is not None:
                fh.close()


class _PointerLog:
    """Columnar (group key, shard, offset, count) log for secondary indexes."""

    def __init__(self) -> None:
        self.keys = array("q")
        self.shards = array("I")
        self.offsets = array("Q")
        self.counts = array("I")

    def add(self, gk: int, shard: int, offset: int, count: int) -> None:
        self.keys.append(gk)
        self.shards.append(shard)
        self.offsets.append(offset)
        self.counts.append(count)

    def __len__(self) -> int:
        return len(self.keys)


def _write_posting_groups(chunks: Iterator[np.ndarray], n_patients: int,
                          key_fn, writer: SegmentWriter) -> _PointerLog:
    """Consume merged (group_key * n_patients + patient) facts, writing one
    posting-list record per group key."""
    pointers = _PointerLog()

    def flush(gk: int, parts: list[np.ndarray]) -> None:
        pats = np.concatenate(parts) if len(parts) > 1 else parts[0]
        shard, off = writer.add(key_fn(gk), store.encode_posting_extra(pats))
        pointers.add(gk, shard, off, len(pats))

    carry_key: Optional[int] = None
    carry_parts: list[np.ndarray] = []
    for chunk in chunks:
        keys = chunk // n_patients
        pats = (chunk - keys * n_patients).astype(np.uint32)
        bounds = np.flatnonzero(keys[1:] != keys[:-1]) + 1
        starts = np.concatenate(([0], bounds))
        ends = np.concatenate((bounds, [keys.size]))
        for s, e in zip(starts, ends):
            gk = int(keys[s])
            part = pats[s:e]
            if carry_key == gk:
                carry_parts.append(part)
                continue
            if carry_key is not None:
                flush(carry_key, carry_parts)
            carry_key = gk
            carry_parts = [part]
    if carry_key is not None:
        flush(carry_key, carry_parts)
    return pointers


# ---------------------------------------------------------------------------
# Full build


def run_build(
    data_dir: str,
    mode: str = "both",
    max_abs_diff: Optional[int] = None,
    spill_entries: int = DEFAULT_SPILL_ENTRIES,
    shard_bytes: int = store.DEFAULT_SHARD_BYTES,
) -> dict:
    """Build the TELII and/or ELII indexes over an ingested data directory."""
    if mode not in MODES:
        raise BuildError(f"unknown build mode {mode!r}; expected one of {MODES}")
    if max_abs_diff is not None and max_abs_diff <= 0:
        raise BuildError("max_abs_diff must be a positive integer")
    manifest = store.read_manifest(data_dir)
    catalog = store.read_catalog(data_dir)
    patients = store.read_patients(data_dir)
    n_events = len(catalog)
    n_patients = len(patients)
    occ_p, occ_e, occ_d = _load_occurrences(data_dir, manifest)

    counts = dict(manifest["counts"])
    build_info = dict(manifest.get("build") or {})
    modes = set(build_info.get("modes") or [])
    keep_kinds = {store.EVENT_TIME.stem, store.EVENT_TIME_BY_EVENT.stem}
    drop_kinds = set()
    if mode in ("telii", "both"):
        drop_kinds.update(k.stem for k in _TELII_KINDS)
    if mode in ("elii", "both"):
        drop_kinds.update(k.stem for k in _ELII_KINDS)
    files = [f for f in manifest.get("files", [])
             if f["kind"] in keep_kinds or f["kind"] not in drop_kinds]
    for f in manifest.get("files", []):
        if f["kind"] in drop_kinds:
            try:
                os.unlink(os.path.join(data_dir, f["name"]))
            except FileNotFoundError:
                pass

    if mode in ("telii", "both"):
        stats = _build_telii(data_dir, occ_p, occ_e, occ_d, n_events, n_patients,
                             max_abs_diff, spill_entries, shard_bytes, files)
        counts.update(stats)
        modes.add("telii")
        build_info["max_abs_diff"] = max_abs_diff
    if mode in ("elii", "both"):
        counts["elii_docs"] = _build_elii_segments(
            data_dir, occ_p, occ_e, n_events, n_patients, catalog, shard_bytes, files)
        modes.add("elii")

    build_info["modes"] = sorted(modes)
    manifest["counts"] = counts
    manifest["build"] = build_info
    manifest["files"] = sorted(files, key=lambda f: f["name"])
    store.write_manifest(data_dir, manifest)
    return manifest


def _load_occurrences(data_dir: str, manifest: dict) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    names = sorted(f["name"] for f in manifest.get("files", [])
                   if f["kind"] == store.EVENT_TIME.stem)
    if not names:
        raise BuildError(f"data dir {data_dir} has no event-time segments; run ingest first")
    seg = store.SegmentSet(data_dir, store.EVENT_TIME, names)
    meta_p = array("q")
    meta_e = array("q")
    meta_n = array("q")
    days_buf = io.BytesIO()
    for key, payload in seg.scan_all():
        pidx, eid = struct.unpack(">II", key)
        (n,) = struct.unpack_from("<I", payload, 8)
        meta_p.append(pidx)
        meta_e.append(eid)
        meta_n.append(n)
        days_buf.write(payload[12:12 + 4 * n])
    lens = np.frombuffer(meta_n, dtype=np.int64)
    occ_p = np.repeat(np.frombuffer(meta_p, dtype=np.int64), lens)
    occ_e = np.repeat(np.frombuffer(meta_e, dtype=np.int64), lens)
    occ_d = np.frombuffer(days_buf.getbuffer(), dtype="<i4").astype(np.int64)
    return occ_p, occ_e, occ_d


def _build_telii(data_dir: str, occ_p: np.ndarray, occ_e: np.ndarray, occ_d: np.ndarray,
                 n_events: int, n_patients: int, max_abs_diff: Optional[int],
                 spill_entries: int, shard_bytes: int, files: list[dict]) -> dict:
    ne1 = n_events + 1
    span = int(occ_d.max() - occ_d.min()) if occ_d.size else 0
    n_diff = 2 * span + 1
    max_rel_key = ((n_events * 3 + 2) * ne1 + n_events) * n_patients + n_patients
    max_diff_key = ((n_events * ne1 + n_events) * n_diff + 2 * span) * n_patients + n_patients
    if max(max_rel_key, max_diff_key) >= (1 << 63):
        raise BuildError(
            "corpus too large for packed fact keys "
            f"(events={n_events}, patients={n_patients}, day span={span})"
        )

    tmp_dir = os.path.join(data_dir, "tmp_build")
    shutil.rmtree(tmp_dir, ignore_errors=True)
    os.makedirs(tmp_dir)
    try:
        rel_sorter = _SpillSorter(tmp_dir, "rel", spill_entries)
        diff_sorter = _SpillSorter(tmp_dir, "diff", spill_entries)
        bounds = np.flatnonzero(np.diff(occ_p)) + 1
        starts = np.concatenate(([0], bounds))
        ends = np.concatenate((bounds, [occ_p.size]))
        for s, e in zip(starts, ends):
            ev = occ_e[s:e]
            dy = occ_d[s:e]
            i_idx, j_idx = np.nonzero(ev[:, None] > ev[None, :])
            if not i_idx.size:
                continue
            pidx = int(occ_p[s])
            a = ev[i_idx]
            b = ev[j_idx]
            d = dy[j_idx] - dy[i_idx]
            dk = np.unique((a * ne1 + b) * n_diff + (d + span))
            d_u = dk % n_diff - span
            pk = dk // n_diff
            a3 = (pk // ne1) * 3
            rb = pk % ne1
            rel_keys = np.concatenate((
                (np.unique((a3 + int(Relation.BEFORE))[d_u <= 0] * ne1 + rb[d_u <= 0])),
                (np.unique((a3 + int(Relation.AFTER))[d_u >= 0] * ne1 + rb[d_u >= 0])),
                ((a3 + int(Relation.CO_OCCUR))[d_u == 0] * ne1 + rb[d_u == 0]),
            ))
            rel_sorter.add(rel_keys * n_patients + pidx)
            if max_abs_diff is not None:
                dk = dk[np.abs(d_u) <= max_abs_diff]
            diff_sorter.add(dk * n_patients + pidx)

        rel_runs = rel_sorter.finish()
        diff_runs = diff_sorter.finish()

        # Relation posting lists, primary order (anchor, relation, related).
        rel_writer = SegmentWriter(data_dir, store.RELATION, shard_bytes)

        def rel_key_bytes(gk: int) -> bytes:
            b = gk % ne1
            ar = gk // ne1
            return store.key_relation(ar // 3, ar % 3, b)

        rel_ptrs = _write_posting_groups(
            merge_sorted_runs(rel_runs), n_patients, rel_key_bytes, rel_writer)
        files.extend(rel_writer.finish())
        _write_pointer_segment(
            data_dir, store.RELATION_BY_RELATED, rel_ptrs, files, shard_bytes,
            sort_key=lambda gks: (gks // ne1 % 3) * (ne1 * ne1) + (gks % ne1) * ne1 + gks // (3 * ne1),
            key_bytes=lambda gk: store.key_relation_by_related(
                (gk // ne1) % 3, gk % ne1, gk // (3 * ne1)),
        )

        # Time-difference posting lists, primary order (anchor, related, diff).
        diff_writer = SegmentWriter(data_dir, store.TIMEDIFF, shard_bytes)

        def diff_key_bytes(gk: int) -> bytes:
            d = gk % n_diff - span
            pk = gk // n_diff
            return store.key_timediff(pk // ne1, pk % ne1, d)

        diff_ptrs = _write_posting_groups(
            merge_sorted_runs(diff_runs), n_patients, diff_key_bytes, diff_writer)
        files.extend(diff_writer.finish())
        _write_pointer_segment(
            data_dir, store.TIMEDIFF_BY_RELATED, diff_ptrs, files, shard_bytes,
            sort_key=lambda gks: ((gks // n_diff) % ne1) * (n_diff * ne1)
                                 + (gks % n_diff) * ne1 + gks // (n_diff * ne1),
            key_bytes=lambda gk: store.key_timediff_by_related(
                (gk // n_diff) % ne1, gk % n_diff - span, gk // (n_diff * ne1)),
        )
        return {
            "relation_docs": len(rel_ptrs),
            "relation_postings": rel_sorter.total,
            "timediff_docs": len(diff_ptrs),
            "timediff_postings": diff_sorter.total,
        }
    finally:
        shutil.rmtree(tmp_dir, ignore_errors=True)


def _write_pointer_segment(data_dir: str, spec: store.KindSpec, pointers: _PointerLog,
                           files: list[dict], shard_bytes: int, sort_key, key_bytes) -> None:
    if not len(pointers):
        return
    gks = np.frombuffer(pointers.keys, dtype=np.int64)
    shards = np.frombuffer(pointers.shards, dtype=np.uint32)
    offsets = np.frombuffer(pointers.offsets, dtype=np.uint64)
    ns = np.frombuffer(pointers.counts, dtype=np.uint32)
    order = np.argsort(sort_key(gks), kind="stable")
    writer = SegmentWriter(data_dir, spec, shard_bytes)
    for i in order:
        gk = int(gks[i])
        writer.add(key_bytes(gk),
                   store.encode_pointer_extra(int(shards[i]), int(offsets[i]), int(ns[i])))
    files.extend(writer.finish())


def _build_elii_segments(data_dir: str, occ_p: np.ndarray, occ_e: np.ndarray,
                         n_events: int, n_patients: int, catalog, shard_bytes: int,
                         files: list[dict]) -> int:
    pairs = np.unique(occ_e * n_patients + occ_p)
    events = pairs // n_patients
    pats = (pairs - events * n_patients).astype(np.uint32)
    by_id = {e.event_id: e for e in catalog}
    writer = SegmentWriter(data_dir, store.ELII, shard_bytes)
    bounds = np.flatnonzero(np.diff(events)) + 1
    starts = np.concatenate(([0], bounds))
    ends = np.concatenate((bounds, [events.size]))
    n_docs = 0
    for s, e in zip(starts, ends):
        event = int(events[s])
        plist = pats[s:e]
        entry = by_id.get(event)
        if entry is None or entry.patient_count != plist.size:
            raise BuildError(
                f"event {event}: posting list size {plist.size} disagrees with catalog"
            )
        writer.add(store.key_elii(event), store.encode_posting_extra(plist))
        n_docs += 1
    files.extend(writer.finish())
    return n_docs
