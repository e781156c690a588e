"""Command-line entry points: gen, ingest, build, query, bench, serve."""

from __future__ import annotations

import json
import sys
import time
from typing import Optional

import click

from . import bench as bench_mod
from . import index as index_mod
from . import ingest as ingest_mod
from . import query as query_mod
from .model import ModelError, Relation, parse_day
from .oracle import Oracle
from .query import DayRange
from .store import StoreHandle, StoreError


class _Fail(click.ClickException):
    exit_code = 1


def _open(data_dir: str) -> StoreHandle:
    try:
        return StoreHandle(data_dir)
    except StoreError as exc:
        raise _Fail(str(exc)) from None


def _parse_within(text: Optional[str]) -> Optional[DayRange]:
    if text is None:
        return None
    try:
        lo, hi = text.split("..")
        return DayRange(int(lo), int(hi))
    except (ValueError, query_mod.InvalidQuery) as exc:
        raise _Fail(f"bad --within {text!r} (expected LO..HI): {exc}") from None


def _emit(payload: dict) -> None:
    click.echo(json.dumps(payload, ensure_ascii=False))


@click.group()
def main() -> None:
    """Temporal event-level inverted index toolkit."""


@main.command()
@click.option("--patients", type=int, required=True)
@click.option("--events", type=int, required=True)
@click.option("--zipf", "zipf_s", type=float, default=1.2, show_default=True)
@click.option("--mean-per-patient", type=int, default=40, show_default=True)
@click.option("--start", required=True, help="window start, YYYY-MM-DD")
@click.option("--end", required=True, help="window end, YYYY-MM-DD")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def gen(patients: int, events: int, zipf_s: float, mean_per_patient: int,
        start: str, end: str, seed: int, out: str) -> None:
    """Generate a deterministic synthetic records file."""
    try:
        cfg = bench_mod.GenConfig(patients, events, zipf_s, mean_per_patient,
                                  parse_day(start), parse_day(end), seed)
        count = bench_mod.gen_synthetic(cfg, out)
    except (ModelError, bench_mod.BenchError, OSError) as exc:
        raise _Fail(str(exc)) from None
    _emit({"records": count, "out": out})


@main.command()
@click.option("--records", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--rules", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--skip-bad", is_flag=True, help="skip malformed lines instead of failing")
def ingest(records: str, rules: Optional[str], out_dir: str, skip_bad: bool) -> None:
    """Scan records, build the event catalog, write event-time segments."""
    try:
        manifest = ingest_mod.run_ingest(records, out_dir, rules, strict=not skip_bad)
    except (ingest_mod.IngestError, ModelError) as exc:
        raise _Fail(str(exc)) from None
    _emit({"out": out_dir, "counts": manifest["counts"]})


@main.command()
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--mode", type=click.Choice(["telii", "elii", "both"]), default="both",
              show_default=True)
@click.option("--max-abs-diff", type=int, default=None,
              help="cap |day difference| stored in the time-difference index")
def build(data_dir: str, mode: str, max_abs_diff: Optional[int]) -> None:
    """Build the TELII/ELII indexes over an ingested data directory."""
    try:
        manifest = index_mod.run_build(data_dir, mode, max_abs_diff)
    except (index_mod.BuildError, StoreError) as exc:
        raise _Fail(str(exc)) from None
    _emit({"out": data_dir, "counts": manifest["counts"], "build": manifest["build"]})


@main.group()
def query() -> None:
    """Run one of the temporal query tasks."""


def _run_engine(data_dir: str, engine: str, records: Optional[str], telii_fn, elii_fn, oracle_fn):
    """Returns (payload fields, elapsed_ms). Engine functions are thunks."""
    if engine == "oracle":
        if not records:
            raise _Fail("--engine oracle requires --records <path>")
        oracle = Oracle(records)
        t0 = time.perf_counter()
        result = oracle_fn(oracle)
        return result, (time.perf_counter() - t0) * 1000.0
    h = _open(data_dir)
    fn = telii_fn if engine == "telii" else elii_fn
    try:
        t0 = time.perf_counter()
        result = fn(h)
        elapsed = (time.perf_counter() - t0) * 1000.0
    except query_mod.QueryError as exc:
        raise _Fail(str(exc)) from None
    return h.patient_ids(result), elapsed


@query.command()
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--engine", type=click.Choice(["telii", "elii", "oracle"]), default="telii",
              show_default=True)
@click.option("--events", required=True, help="comma-separated event refs")
@click.option("--count", "count_only", is_flag=True)
@click.option("--records", type=click.Path(exists=True, dir_okay=False),
              help="raw records file (required for --engine oracle)")
def coexist(data_dir: str, engine: str, events: str, count_only: bool,
            records: Optional[str]) -> None:
    """Patients having every listed event."""
    refs = [e.strip() for e in events.split(",") if e.strip()]
    if len(refs) < 2:
        raise _Fail("--events needs at least two comma-separated refs")

    def run_telii(h):
        return query_mod.coexist_two(h, *refs) if len(refs) == 2 \
            else query_mod.coexist_group(h, refs)

    def run_elii(h):
        return query_mod.elii_coexist_two(h, *refs) if len(refs) == 2 \
            else query_mod.elii_coexist_group(h, refs)

    def run_oracle(oracle):
        keys = _oracle_keys(data_dir, refs)
        return oracle.coexist(keys)

    patients, elapsed = _run_engine(data_dir, engine, records, run_telii, run_elii, run_oracle)
    payload = {"query": {"task": "coexist", "events": refs}, "engine": engine,
               "elapsed_ms": round(elapsed, 3), "count": len(patients)}
    if not count_only:
        payload["patients"] = patients
    _emit(payload)


@query.command(name="before")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--engine", type=click.Choice(["telii", "elii", "oracle"]), default="telii",
              show_default=True)
@click.option("--a", "ref_a", required=True)
@click.option("--b", "ref_b", required=True)
@click.option("--within", default=None, help="inclusive day range LO..HI (LO >= 0)")
@click.option("--count", "count_only", is_flag=True)
@click.option("--records", type=click.Path(exists=True, dir_okay=False))
def before_cmd(data_dir: str, engine: str, ref_a: str, ref_b: str,
               within: Optional[str], count_only: bool, records: Optional[str]) -> None:
    """Patients with event A on-or-before event B (optionally within a range)."""
    rng = _parse_within(within)

    def run_oracle(oracle):
        ka, kb = _oracle_keys(data_dir, [ref_a, ref_b])
        return oracle.before(ka, kb, (rng.lo, rng.hi) if rng else None)

    patients, elapsed = _run_engine(
        data_dir, engine, records,
        lambda h: query_mod.before(h, ref_a, ref_b, rng),
        lambda h: query_mod.elii_before(h, ref_a, ref_b, rng),
        run_oracle)
    payload = {"query": {"task": "before", "a": ref_a, "b": ref_b,
                         "within": [rng.lo, rng.hi] if rng else None},
               "engine": engine, "elapsed_ms": round(elapsed, 3), "count": len(patients)}
    if not count_only:
        payload["patients"] = patients
    _emit(payload)


@query.command()
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--event", required=True)
@click.option("--direction", type=click.Choice(["before", "after", "co-occur"]), required=True)
@click.option("--within", default=None, help="inclusive day range LO..HI (LO >= 0)")
@click.option("--top", "top_k", type=int, default=15, show_default=True)
def explore(data_dir: str, event: str, direction: str, within: Optional[str], top_k: int) -> None:
    """Rank related events around the input event."""
    rng = _parse_within(within)
    h = _open(data_dir)
    try:
        t0 = time.perf_counter()
        rows = query_mod.explore(h, event, Relation.parse(direction), rng, top_k)
        elapsed = (time.perf_counter() - t0) * 1000.0
    except (query_mod.QueryError, ModelError) as exc:
        raise _Fail(str(exc)) from None
    _emit({
        "query": {"task": "explore", "event": event, "direction": direction,
                  "within": [rng.lo, rng.hi] if rng else None, "top_k": top_k},
        "engine": "telii",
        "elapsed_ms": round(elapsed, 3),
        "count": len(rows),
        "rows": [{
            "event_id": r.related_event,
            "label": h.by_id[r.related_event].label,
            "patient_count": r.patient_count,
            "pct": round(r.pct * 100.0, 2),
        } for r in rows],
    })


def _oracle_keys(data_dir: str, refs: list[str]) -> list[str]:
    h = _open(data_dir)
    try:
        return [query_mod.resolve_event(h, r).key.canonical() for r in refs]
    except query_mod.QueryError as exc:
        raise _Fail(str(exc)) from None


@main.command(name="bench")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--records", type=click.Path(exists=True, dir_okay=False),
              help="raw records file enabling oracle verification")
@click.option("--suite", type=click.Choice(["task1", "task2", "task3", "task4", "all"]),
              default="all", show_default=True)
@click.option("--queries-per-task", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def bench_cmd(data_dir: str, records: Optional[str], suite: str,
              queries_per_task: int, seed: int, out: str) -> None:
    """Latency comparison of TELII vs the ELII baseline."""
    try:
        rows = bench_mod.run_suite(data_dir, records, suite, queries_per_task, seed)
        bench_mod.report(rows, out)
    except (bench_mod.BenchError, StoreError, query_mod.QueryError) as exc:
        raise _Fail(str(exc)) from None
    mismatches = sum(1 for r in rows if r.oracle_match is False)
    _emit({"rows": len(rows), "out": out, "oracle_mismatches": mismatches,
           "medians_ms": bench_mod.summarize(rows)})
    if mismatches:
        sys.exit(2)


@main.command()
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--port", type=int, default=8080, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--cors-origin", default=None, help="allow this origin for browser clients")
@click.option("--ui", "ui_dir", type=click.Path(exists=True, file_okay=False),
              help="serve a built explorer UI from this directory")
def serve(data_dir: str, port: int, host: str, cors_origin: Optional[str],
          ui_dir: Optional[str]) -> None:
    """Serve the query API (and optionally the explorer UI) over HTTP."""
    import uvicorn

    from .service import create_app

    try:
        app = create_app(data_dir, cors_origin=cors_origin, ui_dir=ui_dir)
    except StoreError as exc:
        raise _Fail(str(exc)) from None
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
