"""Segment format and lookup-vs-linear-scan behaviour."""

import random
import struct

import numpy as np
import pytest

from telii import store
from telii.model import Relation
from telii.store import (
    RELATION,
    SegmentSet,
    SegmentWriter,
    StoreError,
    StoreHandle,
)

SEED = 1309


def _write_kv(tmp_path, n, shard_bytes=store.DEFAULT_SHARD_BYTES):
    """n elii-style records keyed 0..n-1, payload = posting [key, key+1]."""
    writer = SegmentWriter(str(tmp_path), store.ELII, shard_bytes)
    for i in range(n):
        writer.add(store.key_elii(i),
                   store.encode_posting_extra(np.array([i, i + 1], dtype=np.uint32)))
    return writer.finish()


def test_roundtrip_and_point_lookup(tmp_path):
    files = _write_kv(tmp_path, 10_000)  # > one footer sample interval
    seg = SegmentSet(str(tmp_path), store.ELII, [f["name"] for f in files])
    assert seg.count == 10_000
    rnd = random.Random(SEED)
    for _ in range(200):
        k = rnd.randrange(10_000)
        payload = seg.get(store.key_elii(k))
        assert payload is not None
        assert store._decode_postings(payload, 4).tolist() == [k, k + 1]
    assert seg.get(store.key_elii(10_001)) is None


def test_scan_matches_full_scan_filter(tmp_path):
    files = _write_kv(tmp_path, 5000)
    seg = SegmentSet(str(tmp_path), store.ELII, [f["name"] for f in files])
    everything = [struct.unpack(">I", k)[0] for k, _ in seg.scan_all()]
    assert everything == list(range(5000))
    rnd = random.Random(SEED)
    for _ in range(50):
        lo = rnd.randrange(5000)
        hi = rnd.randrange(lo, 5000)
        got = [struct.unpack(">I", k)[0]
               for k, _ in seg.scan(store.key_elii(lo), store.key_elii(hi))]
        assert got == [k for k in everything if lo <= k <= hi]


def test_shard_rolling_preserves_order(tmp_path):
    files = _write_kv(tmp_path, 3000, shard_bytes=4096)
    assert len(files) > 1
    seg = SegmentSet(str(tmp_path), store.ELII, [f["name"] for f in files])
    assert [struct.unpack(">I", k)[0] for k, _ in seg.scan_all()] == list(range(3000))
    assert seg.get(store.key_elii(2999)) is not None


def test_writer_rejects_unsorted_keys(tmp_path):
    writer = SegmentWriter(str(tmp_path), store.ELII)
    writer.add(store.key_elii(5), b"\x00\x00\x00\x00")
    with pytest.raises(StoreError, match="ascending"):
        writer.add(store.key_elii(5), b"\x00\x00\x00\x00")


def test_truncated_segment_detected(tmp_path):
    files = _write_kv(tmp_path, 100)
    path = tmp_path / files[0]["name"]
    data = path.read_bytes()
    path.write_bytes(data[:len(data) // 2])
    with pytest.raises(StoreError, match="corrupt|truncated|checksum"):
        SegmentSet(str(tmp_path), store.ELII, [files[0]["name"]])


def test_footer_corruption_detected(tmp_path):
    files = _write_kv(tmp_path, 100)
    path = tmp_path / files[0]["name"]
    data = bytearray(path.read_bytes())
    data[-40] ^= 0xFF  # inside the footer region
    path.write_bytes(bytes(data))
    with pytest.raises(StoreError):
        SegmentSet(str(tmp_path), store.ELII, [files[0]["name"]])


def test_body_corruption_detected_by_verify(tmp_path):
    files = _write_kv(tmp_path, 100)
    path = tmp_path / files[0]["name"]
    data = bytearray(path.read_bytes())
    data[10] ^= 0xFF
    path.write_bytes(bytes(data))
    seg = SegmentSet(str(tmp_path), store.ELII, [files[0]["name"]])
    with pytest.raises(StoreError, match="body checksum"):
        seg.shards[0].verify_body()


def test_open_empty_dir_reports_missing_manifest(tmp_path):
    with pytest.raises(StoreError, match="manifest missing"):
        StoreHandle(str(tmp_path))


def test_open_is_idempotent(small_corpus):
    h1 = StoreHandle(small_corpus.data)
    h2 = StoreHandle(small_corpus.data)
    assert h1.manifest == h2.manifest
    eid = h1.catalog[0].event_id
    d1, d2 = h1.get_elii(eid), h2.get_elii(eid)
    assert d1.patients.tolist() == d2.patients.tolist()


def test_open_matches_manifest_counts(small_corpus):
    h = small_corpus.handle
    assert len(h.catalog) == h.manifest["counts"]["events"]
    assert len(h.patients) == h.manifest["counts"]["patients"]


def test_relation_lookup_equals_segment_scan(small_corpus):
    h = small_corpus.handle
    docs = list(h.scan_relation_all())
    assert docs, "corpus should produce relation docs"
    rnd = random.Random(SEED)
    for doc in rnd.sample(docs, 50):
        got = h.get_relation(doc.anchor, doc.relation, doc.related)
        assert got.patients.tolist() == doc.patients.tolist()
    # absent key -> None (empty cohort)
    max_id = len(h.catalog)
    assert h.get_relation(max_id + 5, Relation.BEFORE, 1) is None


def test_anchor_scans_are_ordered_and_complete(small_corpus):
    h = small_corpus.handle
    all_docs = list(h.scan_relation_all())
    anchor = all_docs[len(all_docs) // 2].anchor
    for rel in Relation:
        got = [(d.related, d.patients.tolist()) for d in h.scan_by_anchor(anchor, rel)]
        expect = [(d.related, d.patients.tolist()) for d in all_docs
                  if d.anchor == anchor and d.relation == rel]
        assert got == expect
        assert [g[0] for g in got] == sorted(g[0] for g in got)


def test_related_scan_matches_filter(small_corpus):
    h = small_corpus.handle
    all_docs = list(h.scan_relation_all())
    related = all_docs[0].related
    for rel in Relation:
        got = {(d.anchor, tuple(d.patients.tolist())) for d in h.scan_by_related(rel, related)}
        expect = {(d.anchor, tuple(d.patients.tolist())) for d in all_docs
                  if d.related == related and d.relation == rel}
        assert got == expect


def test_timediff_range_inclusive_bounds(small_corpus):
    h = small_corpus.handle
    docs = list(h.scan_timediff_all())
    by_pair = {}
    for d in docs:
        by_pair.setdefault((d.anchor, d.related), []).append(d.day_diff)
    (anchor, related), diffs = max(by_pair.items(), key=lambda kv: len(kv[1]))
    diffs = sorted(diffs)
    lo, hi = diffs[0], diffs[len(diffs) // 2]
    got = [d.day_diff for d in h.range_timediff(anchor, related, lo, hi)]
    assert got == [d for d in diffs if lo <= d <= hi]
    # bounds are inclusive
    assert lo in got and hi in got


def test_timediff_anchor_scan_matches_filter(small_corpus):
    h = small_corpus.handle
    docs = list(h.scan_timediff_all())
    anchor = docs[len(docs) // 3].anchor
    got = {(d.related, d.day_diff) for d in h.range_timediff(anchor, None, -30, 30)}
    expect = {(d.related, d.day_diff) for d in docs
              if d.anchor == anchor and -30 <= d.day_diff <= 30}
    assert got == expect


def test_timediff_by_related_matches_filter(small_corpus):
    h = small_corpus.handle
    docs = list(h.scan_timediff_all())
    related = docs[0].related
    got = {(d.anchor, d.day_diff, tuple(d.patients.tolist()))
           for d in h.range_timediff_by_related(related, -10, 10)}
    expect = {(d.anchor, d.day_diff, tuple(d.patients.tolist())) for d in docs
              if d.related == related and -10 <= d.day_diff <= 10}
    assert got == expect


def test_inverted_range_rejected(small_corpus):
    with pytest.raises(StoreError, match="inverted"):
        list(small_corpus.handle.range_timediff(1, None, 10, -10))


def test_event_time_point_lookup(small_corpus):
    h = small_corpus.handle
    docs = list(h.scan_event_time_by_event(h.catalog[0].event_id))
    assert docs
    sample = docs[len(docs) // 2]
    got = h.get_event_time(sample.patient_id, sample.event_id)
    assert got == sample
    assert h.get_event_time("PT_NOT_A_PATIENT", sample.event_id) is None


def test_patient_index_round_trip(small_corpus):
    h = small_corpus.handle
    for i in (0, 1, len(h.patients) - 1):
        assert h.patient_index(h.patients[i]) == i
    assert h.patient_index("zzzz") is None
