"""Synthetic corpus generation and the engine benchmark harness.

The generator draws event popularity from a Zipf distribution so a few
events are very common and most are rare, which is what makes the anchor
rule worth having. Everything is keyed off one seed: the same config
always produces a byte-identical records file, and the same bench seed
always samples the same queries.

The harness times each engine single-threaded against a warm store
(5 repetitions, median) and, when the raw records file is provided,
checks every engine answer against the brute-force oracle.
"""

from __future__ import annotations

import csv
import json
import random
import statistics
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import query as q
from .model import DOMAINS, Relation, format_day
from .oracle import Oracle
from .store import StoreHandle

REPETITIONS = 5

_GEN_DOMAINS = tuple(d for d in DOMAINS if d != "DERIVED")
_CODE_TYPES = {
    "DIAGNOSIS": "ICD-10",
    "LAB": "LOINC",
    "MEDICATION": "NDC",
    "PROCEDURE": "CPT",
    "OBSERVATION": "",
    "IMMUNIZATION": "CVX",
}
_STATUSES = {"DIAGNOSIS": "Diagnosis of"}


class BenchError(Exception):
    pass


@dataclass(frozen=True)
class GenConfig:
    """Synthetic corpus shape. Dates are day stamps (days since epoch)."""

    patients: int
    events: int
    zipf_s: float
    mean_events_per_patient: int
    start_day: int
    end_day: int
    seed: int

    def __post_init__(self) -> None:
        if min(self.patients, self.events, self.mean_events_per_patient) < 1:
            raise BenchError("patients, events, and mean_events_per_patient must be positive")
        if self.zipf_s <= 0:
            raise BenchError("zipf_s must be > 0")
        if self.start_day > self.end_day:
            raise BenchError("date window start must not exceed end")


@dataclass
class BenchRow:
    task: str
    query: str
    engine: str
    elapsed_ms: float
    result_count: int
    oracle_match: Optional[bool] = None


def event_fields(rank: int) -> tuple[str, str, str, str]:
    """Deterministic (domain, code, code_type, status) for a popularity rank."""
    domain = _GEN_DOMAINS[rank % len(_GEN_DOMAINS)]
    return (domain, f"C{rank:05d}", _CODE_TYPES[domain], _STATUSES.get(domain, ""))


def gen_synthetic(cfg: GenConfig, out_path: str) -> int:
    """Write a records JSON-lines file; returns the record count."""
    rng = np.random.default_rng(cfg.seed)
    counts = np.maximum(rng.poisson(cfg.mean_events_per_patient, cfg.patients), 1)
    total = int(counts.sum())

    pmf = np.arange(1, cfg.events + 1, dtype=np.float64) ** -cfg.zipf_s
    cum = np.cumsum(pmf / pmf.sum())
    ranks = np.searchsorted(cum, rng.random(total), side="right")
    days = rng.integers(cfg.start_day, cfg.end_day + 1, total)

    date_text = [format_day(d) for d in range(cfg.start_day, cfg.end_day + 1)]
    lines: list[str] = []
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        i = 0
        for p in range(cfg.patients):
            pid = f"PT{p + 1:07d}"
            for _ in range(counts[p]):
                domain, code, code_type, status = event_fields(int(ranks[i]))
                date = date_text[days[i] - cfg.start_day]
                lines.append(
                    f'{{"patient_id":"{pid}","date":"{date}","domain":"{domain}",'
                    f'"code":"{code}","code_type":"{code_type}","status":"{status}"}}'
                )
                i += 1
            if len(lines) >= 65536:
                fh.write("\n".join(lines))
                fh.write("\n")
                lines.clear()
        if lines:
            fh.write("\n".join(lines))
            fh.write("\n")
    return total


# ---------------------------------------------------------------------------
# Query sampling


@dataclass
class _Sampled:
    task: str
    descriptor: str
    engines: tuple[str, ...]
    args: dict = field(default_factory=dict)


def _sample_queries(h: StoreHandle, suite: str, per_task: int, seed: int) -> list[_Sampled]:
    rng = random.Random(seed)
    ids = [e.event_id for e in h.catalog]
    if len(ids) < 3:
        raise BenchError("catalog too small to sample benchmark queries")
    cut = max(1, len(ids) // 5)
    common = ids[:cut]                # smallest ids = most patients
    rare = ids[-cut:]
    rare_pick = rng.choice(rare)

    def pair(force_rare: bool) -> tuple[int, int]:
        a = rng.choice(common)
        b = rare_pick if force_rare else rng.choice(ids)
        while b == a:
            b = rng.choice(ids)
        return a, b

    tasks = ("task1", "task2", "task3", "task4") if suite == "all" else (suite,)
    out: list[_Sampled] = []
    for task in tasks:
        for i in range(per_task):
            force_rare = i == per_task - 1  # mirror the rare-event probe
            if task == "task1":
                a, b = pair(force_rare)
                out.append(_Sampled("task1", f"coexist({a},{b})",
                                    ("telii", "elii"), {"events": [a, b]}))
            elif task == "task2":
                size = 3 + i % 5
                members = rng.sample(common, min(size, len(common)))
                extra = rare_pick if force_rare else rng.choice(ids)
                if extra not in members:
                    members.append(extra)
                if len(members) < 2:
                    members = rng.sample(ids, 2)
                out.append(_Sampled("task2", f"coexist({','.join(map(str, members))})",
                                    ("telii", "elii"), {"events": members}))
            elif task == "task3":
                a, b = pair(force_rare)
                out.append(_Sampled("task3", f"before({a},{b})",
                                    ("telii", "elii"), {"a": a, "b": b}))
            elif task == "task4":
                event = rare_pick if force_rare else rng.choice(common)
                lo, hi = (0, 30) if i % 2 == 0 else (31, 60)
                out.append(_Sampled("task4", f"explore({event},after,{lo}..{hi})",
                                    ("telii",),
                                    {"event": event, "within": (lo, hi)}))
            else:
                raise BenchError(f"unknown suite {task!r}")
    return out


# ---------------------------------------------------------------------------
# Execution


def _run_query(h: StoreHandle, s: _Sampled, engine: str):
    if s.task in ("task1", "task2"):
        if engine == "telii":
            return q.coexist_group(h, s.args["events"]) if len(s.args["events"]) > 2 \
                else q.coexist_two(h, *s.args["events"])
        return q.elii_coexist_group(h, s.args["events"]) if len(s.args["events"]) > 2 \
            else q.elii_coexist_two(h, *s.args["events"])
    if s.task == "task3":
        fn = q.before if engine == "telii" else q.elii_before
        return fn(h, s.args["a"], s.args["b"])
    if s.task == "task4":
        lo, hi = s.args["within"]
        return q.explore(h, s.args["event"], Relation.AFTER,
                         q.DayRange(lo, hi), top_k=len(h.catalog))
    raise BenchError(f"unknown task {s.task!r}")


def _oracle_check(h: StoreHandle, oracle: Oracle, s: _Sampled, result) -> bool:
    def canon(event_id: int) -> str:
        return h.by_id[event_id].key.canonical()

    if s.task in ("task1", "task2"):
        expect = oracle.coexist([canon(e) for e in s.args["events"]])
        return h.patient_ids(result) == expect
    if s.task == "task3":
        expect = oracle.before(canon(s.args["a"]), canon(s.args["b"]))
        return h.patient_ids(result) == expect
    if s.task == "task4":
        expect = oracle.explore(canon(s.args["event"]), "after", s.args["within"])
        got = {canon(r.related_event): r.patient_count for r in result}
        return got == expect
    return False


def run_suite(data_dir: str, records: Optional[str], suite: str = "all",
              queries_per_task: int = 10, seed: int = 0,
              handle: Optional[StoreHandle] = None) -> list[BenchRow]:
    """Time every sampled query on each applicable engine; verify against
    the oracle when the raw records file is given."""
    h = handle if handle is not None else StoreHandle(data_dir)
    modes = set(h.manifest.get("build", {}).get("modes") or [])
    missing = {"telii", "elii"} - modes
    if missing:
        raise BenchError(
            f"store at {data_dir} is missing index mode(s) {sorted(missing)}; "
            f"run build with --mode both"
        )
    sampled = _sample_queries(h, suite, queries_per_task, seed)
    oracle = Oracle(records) if records else None
    rows: list[BenchRow] = []
    for s in sampled:
        for engine in s.engines:
            times = []
            result = None
            for _ in range(REPETITIONS):
                t0 = time.perf_counter()
                result = _run_query(h, s, engine)
                times.append((time.perf_counter() - t0) * 1000.0)
            match = _oracle_check(h, oracle, s, result) if oracle else None
            rows.append(BenchRow(s.task, s.descriptor, engine,
                                 statistics.median(times), len(result), match))
    return rows


def report(rows: Sequence[BenchRow], out_path: str) -> None:
    """Write the raw CSV plus a markdown summary with per-task median
    speedups, X = (time_B - time_A) / time_A with A = telii, B = elii."""
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["task", "query", "engine", "elapsed_ms", "result_count", "oracle_match"])
        for r in rows:
            w.writerow([r.task, r.query, r.engine, f"{r.elapsed_ms:.3f}",
                        r.result_count, "" if r.oracle_match is None else r.oracle_match])

    md_path = out_path.rsplit(".", 1)[0] + ".md"
    by_task: dict[str, dict[str, dict[str, float]]] = {}
    for r in rows:
        by_task.setdefault(r.task, {}).setdefault(r.query, {})[r.engine] = r.elapsed_ms
    lines = ["| task | queries | telii median ms | elii median ms | median speedup X |",
             "|------|---------|-----------------|----------------|------------------|"]
    for task in sorted(by_task):
        queries = by_task[task]
        telii = [e["telii"] for e in queries.values() if "telii" in e]
        elii = [e["elii"] for e in queries.values() if "elii" in e]
        speedups = [(e["elii"] - e["telii"]) / e["telii"]
                    for e in queries.values() if "telii" in e and "elii" in e]
        lines.append("| {} | {} | {:.3f} | {} | {} |".format(
            task, len(queries),
            statistics.median(telii),
            f"{statistics.median(elii):.3f}" if elii else "-",
            f"{statistics.median(speedups):.1f}" if speedups else "-",
        ))
    mismatches = [r for r in rows if r.oracle_match is False]
    lines.append("")
    checked = [r for r in rows if r.oracle_match is not None]
    if checked:
        lines.append(f"oracle checks: {len(checked) - len(mismatches)}/{len(checked)} matched")
    with open(md_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def summarize(rows: Sequence[BenchRow]) -> dict:
    """Per-(task, engine) median latency, for programmatic consumers."""
    acc: dict[tuple[str, str], list[float]] = {}
    for r in rows:
        acc.setdefault((r.task, r.engine), []).append(r.elapsed_ms)
    return {
        f"{task}.{engine}": statistics.median(v)
        for (task, engine), v in sorted(acc.items())
    }
