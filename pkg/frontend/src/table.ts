import type { ExploreResponse, ExploreRowWire } from "./types.js";

/** One rendered explore-table row. Numbers are verbatim from the
 * service; the only transformation is adding rank and the % suffix. */
export interface ExploreTableRow {
  rank: number;
  event_id: number;
  label: string;
  patient_count: number;
  pct: number;
  pct_text: string;
}

export function buildExploreTable(response: ExploreResponse): ExploreTableRow[] {
  return response.rows.map((row: ExploreRowWire, i: number) => ({
    rank: i + 1,
    event_id: row.event_id,
    label: row.label,
    patient_count: row.patient_count,
    pct: row.pct,
    pct_text: `${row.pct.toFixed(2)}%`,
  }));
}

export const EXPLORE_CSV_HEADER = ["rank", "event_id", "label", "patient_count", "pct"];

export function exploreTableToCells(rows: ExploreTableRow[]): string[][] {
  return rows.map((r) => [
    String(r.rank), String(r.event_id), r.label, String(r.patient_count), r.pct_text,
  ]);
}
