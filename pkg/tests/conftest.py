import json
from types import SimpleNamespace

import pytest

from telii import bench, index, ingest
from telii.model import parse_day
from telii.store import StoreHandle


def build_corpus(root, patients=300, events=40, zipf=1.2, mean=12, seed=11,
                 max_abs_diff=None, start="2020-01-01", end="2021-12-31"):
    """gen -> ingest -> build (both modes) under root; returns paths + config."""
    records = root / "records.jsonl"
    cfg = bench.GenConfig(patients, events, zipf, mean,
                          parse_day(start), parse_day(end), seed)
    n = bench.gen_synthetic(cfg, str(records))
    data = root / "data"
    ingest.run_ingest(str(records), str(data))
    index.run_build(str(data), "both", max_abs_diff=max_abs_diff)
    return SimpleNamespace(records=str(records), data=str(data), cfg=cfg, n_records=n)


def write_records(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row))
            fh.write("\n")
    return str(path)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Seeded 300-patient corpus with both indexes built, uncapped."""
    corpus = build_corpus(tmp_path_factory.mktemp("small"))
    corpus.handle = StoreHandle(corpus.data)
    return corpus
