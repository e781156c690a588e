import calendar
import random
import time

import pytest

from telii.model import (
    EventKey,
    ModelError,
    Relation,
    canonicalize_event_key,
    format_day,
    parse_day,
    parse_event_key_text,
)

SEED = 823


def test_parse_day_epoch():
    assert parse_day("1970-01-01") == 0


def test_parse_day_january_has_31_days():
    assert parse_day("1970-02-01") == 31


def test_parse_day_matches_posix_arithmetic():
    # independent oracle: epoch seconds / 86400
    posix = calendar.timegm(time.strptime("2020-02-01", "%Y-%m-%d")) // 86400
    assert posix == 18293
    assert parse_day("2020-02-01") == 18293


@pytest.mark.parametrize("bad", [
    "2020-13-01", "2020-02-30", "20200201", "2020-2-1", "not-a-date",
    "1899-12-31", "2101-01-01", "2020/02/01", "",
])
def test_parse_day_rejects(bad):
    with pytest.raises(ModelError):
        parse_day(bad)


def test_day_roundtrip_random_dates():
    rnd = random.Random(SEED)
    lo, hi = parse_day("1900-01-01"), parse_day("2100-12-31")
    for _ in range(500):
        stamp = rnd.randint(lo, hi)
        assert parse_day(format_day(stamp)) == stamp


def test_canonicalize_trims_and_uppercases_domain():
    key = canonicalize_event_key("diagnosis", " U07.1 ", "ICD-10", "Diagnosis of")
    assert key == EventKey("DIAGNOSIS", "U07.1", "ICD-10", "Diagnosis of")
    assert key.canonical() == "DIAGNOSIS\x1fU07.1\x1fICD-10\x1fDiagnosis of"


def test_empty_fields_are_significant():
    a = canonicalize_event_key("DIAGNOSIS", "U07.1", "ICD-10", "Diagnosis of")
    b = canonicalize_event_key("DIAGNOSIS", "U07.1", "", "")
    assert a != b
    assert a.canonical() != b.canonical()


def test_canonicalize_is_deterministic():
    one = canonicalize_event_key(" lab ", "1234-5 ", " LOINC", "")
    two = canonicalize_event_key("LAB", "1234-5", "LOINC", " ")
    assert one == two


def test_unknown_domain_lists_accepted():
    with pytest.raises(ModelError, match="DIAGNOSIS"):
        canonicalize_event_key("visit", "X", "", "")


def test_code_case_preserved():
    assert canonicalize_event_key("LAB", "abc", "", "").code == "abc"


def test_display_roundtrip_with_escapes():
    key = canonicalize_event_key("LAB", "a:b\\c", "LO:INC", "")
    assert parse_event_key_text(key.display()) == key
    assert "\\:" in key.display()


def test_display_roundtrip_plain():
    key = canonicalize_event_key("DIAGNOSIS", "U07.1", "ICD-10", "Diagnosis of")
    assert key.display() == "DIAGNOSIS:U07.1:ICD-10:Diagnosis of"
    assert parse_event_key_text(key.display()) == key


def test_relation_parse():
    assert Relation.parse("before") is Relation.BEFORE
    assert Relation.parse("co-occur") is Relation.CO_OCCUR
    with pytest.raises(ModelError):
        Relation.parse("during")
