import type {
  ApiErrorBody,
  BeforeRequest,
  CatalogEvent,
  CoexistRequest,
  ExploreRequest,
  ExploreResponse,
  HealthResponse,
  PatientsResponse,
} from "./types.js";

/** A service error with its machine-readable code (NOT_FOUND, ...). */
export class ApiRequestError extends Error {
  constructor(readonly code: string, message: string, readonly status: number) {
    super(message);
  }
}

async function asJson<T>(response: Response): Promise<T> {
  if (response.ok) {
    return (await response.json()) as T;
  }
  let body: ApiErrorBody | null = null;
  try {
    body = (await response.json()) as ApiErrorBody;
  } catch {
    // non-JSON error body; fall through
  }
  throw new ApiRequestError(body?.code ?? "INTERNAL",
    body?.message ?? `HTTP ${response.status}`, response.status);
}

/** Thin typed client; the base URL is the single piece of configuration. */
export class ApiClient {
  constructor(readonly baseUrl: string = "") {}

  private async get<T>(path: string): Promise<T> {
    return asJson<T>(await fetch(this.baseUrl + path));
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    return asJson<T>(await fetch(this.baseUrl + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    }));
  }

  health(): Promise<HealthResponse> {
    return this.get("/healthz");
  }

  async searchEvents(q: string, limit = 20): Promise<CatalogEvent[]> {
    const params = new URLSearchParams({ q, limit: String(limit) });
    const body = await this.get<{ events: CatalogEvent[] }>(`/events?${params}`);
    return body.events;
  }

  getEvent(id: number): Promise<CatalogEvent> {
    return this.get(`/events/${id}`);
  }

  coexist(body: CoexistRequest): Promise<PatientsResponse> {
    return this.post("/query/coexist", body);
  }

  before(body: BeforeRequest): Promise<PatientsResponse> {
    return this.post("/query/before", body);
  }

  explore(body: ExploreRequest): Promise<ExploreResponse> {
    return this.post("/query/explore", body);
  }
}
