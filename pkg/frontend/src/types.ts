// Shapes mirrored from the query service's JSON API.

export interface CatalogEvent {
  event_id: number;
  key: string;
  domain: string;
  code: string;
  code_type: string;
  status: string;
  patient_count: number;
  label: string;
}

export interface DayRange {
  lo: number;
  hi: number;
}

export interface ExploreRowWire {
  event_id: number;
  label: string;
  patient_count: number;
  pct: number; // percentage, already rounded to 2 decimals by the service
}

export interface ExploreResponse {
  rows: ExploreRowWire[];
  elapsed_ms: number;
}

export interface PatientsResponse {
  count: number;
  patients?: string[];
  offset?: number;
  limit?: number;
  elapsed_ms: number;
}

export interface HealthResponse {
  status: string;
  patients: number;
  events: number;
}

export interface ApiErrorBody {
  code: string;
  message: string;
}

export interface CoexistRequest {
  events: Array<number | string>;
  count_only?: boolean;
  limit?: number;
  offset?: number;
}

export interface BeforeRequest {
  a: number | string;
  b: number | string;
  within?: DayRange | null;
  count_only?: boolean;
  limit?: number;
  offset?: number;
}

export interface ExploreRequest {
  event: number | string;
  direction: string;
  within?: DayRange | null;
  top_k: number;
}
