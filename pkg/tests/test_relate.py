import random

import numpy as np
import pytest

from telii.relate import (
    RelateError,
    extract_patient_diffs,
    extract_patient_relations,
    occurrence_pairs,
    timeline_arrays,
)
from telii.store import EventTimeDoc

SEED = 4242


def _doc(event_id, times, pid="P1"):
    return EventTimeDoc(pid, event_id, tuple(sorted(set(times))))


def _flags(rels, anchor, related):
    for r in rels:
        if (r.anchor, r.related) == (anchor, related):
            return (r.has_before, r.has_after, r.has_cooccur)
    raise AssertionError(f"pair ({anchor}, {related}) missing")


def test_single_points_before_only():
    rels = extract_patient_relations([_doc(9, [10]), _doc(3, [5])])
    assert _flags(rels, 9, 3) == (True, False, False)


def test_same_day_counts_both_ways():
    rels = extract_patient_relations([_doc(9, [10]), _doc(3, [10])])
    assert _flags(rels, 9, 3) == (True, True, True)


def test_straddle_without_shared_date():
    # brute force over occurrence pairs: 10 <= 20 and 10 >= 3, no shared date
    rels = extract_patient_relations([_doc(9, [3, 20]), _doc(3, [10])])
    assert _flags(rels, 9, 3) == (True, True, False)


def test_diff_examples():
    diffs = extract_patient_diffs([_doc(9, [10]), _doc(3, [5, 40])])
    assert diffs[0].diffs == {-5, 30}

    diffs = extract_patient_diffs([_doc(9, [10]), _doc(3, [10])])
    assert diffs[0].diffs == {0}

    # all four occurrence pairs enumerated by hand
    diffs = extract_patient_diffs([_doc(9, [0, 7]), _doc(3, [3, 7])])
    assert diffs[0].diffs == {3, 7, -4, 0}


def test_diff_cap_filters_and_drops():
    docs = [_doc(9, [10]), _doc(3, [5, 40])]
    assert extract_patient_diffs(docs, max_abs_diff=5)[0].diffs == {-5}
    assert extract_patient_diffs(docs, max_abs_diff=3) == []


def test_orientation_anchor_has_larger_id():
    rels = extract_patient_relations([_doc(1, [1]), _doc(2, [2]), _doc(3, [3])])
    assert all(r.anchor > r.related for r in rels)
    assert len(rels) == 3


def test_mixed_patients_rejected():
    docs = [_doc(1, [1], pid="P1"), _doc(2, [2], pid="P2")]
    with pytest.raises(RelateError, match="mixes patients"):
        extract_patient_relations(docs)
    with pytest.raises(RelateError):
        extract_patient_diffs(docs)


def _random_timeline(rnd):
    n_events = rnd.randint(2, 8)
    ids = rnd.sample(range(1, 40), n_events)
    return [_doc(e, [rnd.randint(0, 60) for _ in range(rnd.randint(1, 5))]) for e in ids]


def test_flags_consistent_with_uncapped_diffs():
    rnd = random.Random(SEED)
    for _ in range(200):
        timeline = _random_timeline(rnd)
        rels = {(r.anchor, r.related): r for r in extract_patient_relations(timeline)}
        diffs = {(d.anchor, d.related): d.diffs for d in extract_patient_diffs(timeline)}
        assert rels.keys() == diffs.keys()
        for pair, ds in diffs.items():
            r = rels[pair]
            # d <= 0 means the related event occurred on-or-before the anchor
            assert r.has_before == any(d <= 0 for d in ds)
            assert r.has_after == any(d >= 0 for d in ds)
            assert r.has_cooccur == (0 in ds)
            assert r.has_before or r.has_after
            if r.has_cooccur:
                assert r.has_before and r.has_after


def test_occurrence_pairs_agree_with_extractors():
    rnd = random.Random(SEED + 1)
    for _ in range(200):
        timeline = _random_timeline(rnd)
        events, days = timeline_arrays(timeline)
        a, b, d = occurrence_pairs(events, days)
        assert (a > b).all()

        got = {}
        for ai, bi, di in zip(a, b, d):
            got.setdefault((int(ai), int(bi)), set()).add(int(di))
        expect = {(x.anchor, x.related): set(x.diffs)
                  for x in extract_patient_diffs(timeline)}
        assert got == expect


def test_occurrence_pairs_empty_for_single_event():
    a, b, d = occurrence_pairs(np.array([5, 5]), np.array([1, 9]))
    assert a.size == b.size == d.size == 0
