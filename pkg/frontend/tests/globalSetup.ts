// Builds the acceptance corpus once (cached under .cache/), starts the
// query service on a local port, and hands its coordinates to the tests
// via .cache/a9-info.json. If the backend CLI is not on PATH the
// integration tests are skipped, not failed.

import { execFileSync, spawn, ChildProcess } from "node:child_process";
import { existsSync, mkdirSync, rmSync, writeFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

const CACHE = join(dirname(fileURLToPath(import.meta.url)), "..", ".cache");
const DATA = join(CACHE, "a9-data");
const RECORDS = join(CACHE, "a9-records.jsonl");
const INFO = join(CACHE, "a9-info.json");
const BIN = process.env.TELII_BIN ?? "telii";
const PORT = 18000 + (process.pid % 2000);

let child: ChildProcess | null = null;

function cli(args: string[]): void {
  execFileSync(BIN, args, { stdio: "pipe", timeout: 240_000 });
}

function buildCorpusIfNeeded(): void {
  if (existsSync(join(DATA, "manifest.json"))) return;
  rmSync(DATA, { recursive: true, force: true });
  mkdirSync(CACHE, { recursive: true });
  // same shape as the backend acceptance corpus
  cli(["gen", "--patients", "5000", "--events", "300", "--zipf", "1.2",
       "--mean-per-patient", "40", "--start", "2020-01-01", "--end", "2021-12-31",
       "--seed", "20260810", "--out", RECORDS]);
  cli(["ingest", "--records", RECORDS, "--out", DATA]);
  cli(["build", "--data", DATA, "--mode", "both"]);
}

async function waitForHealth(url: string): Promise<void> {
  for (let i = 0; i < 150; i++) {
    try {
      const res = await fetch(`${url}/healthz`);
      if (res.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 200));
  }
  throw new Error(`service at ${url} did not become healthy`);
}

export default async function setup(): Promise<() => void> {
  mkdirSync(CACHE, { recursive: true });
  try {
    execFileSync(BIN, ["--help"], { stdio: "pipe" });
  } catch {
    writeFileSync(INFO, JSON.stringify({ disabled: `backend CLI '${BIN}' not found` }));
    return () => {};
  }
  buildCorpusIfNeeded();
  const url = `http://127.0.0.1:${PORT}`;
  child = spawn(BIN, ["serve", "--data", DATA, "--port", String(PORT)],
                { stdio: "ignore" });
  await waitForHealth(url);
  writeFileSync(INFO, JSON.stringify({ url, data: DATA, records: RECORDS, bin: BIN }));
  return () => {
    child?.kill("SIGTERM");
  };
}
