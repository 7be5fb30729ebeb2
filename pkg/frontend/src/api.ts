// Thin fetch client for the conduct service. Everything the UI shows comes
// through here; there is no other channel to the backend.

import type {
  EventsPage,
  ObservationSubmission,
  PosteriorPayload,
  RecommendationPayload,
  TrialStatus,
} from "./types.js";

export class ApiError extends Error {
  readonly status: number;
  readonly detail: string;

  constructor(status: number, detail: string) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
    this.status = status;
    this.detail = detail;
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ConductClient {
  private readonly base: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl: string, fetchImpl?: FetchLike) {
    this.base = baseUrl.replace(/\/+$/, "");
    // wrap the global so it is not called with the client as `this`
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchImpl(this.base + path, init);
    let body: unknown = null;
    try {
      body = await resp.json();
    } catch {
      // non-JSON body; error path below falls back to the status text
    }
    if (!resp.ok) {
      const detail =
        body !== null && typeof (body as { detail?: unknown }).detail === "string"
          ? (body as { detail: string }).detail
          : resp.statusText || `status ${resp.status}`;
      throw new ApiError(resp.status, detail);
    }
    return body as T;
  }

  private post<T>(path: string, payload: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  health(): Promise<{ status: string; trials: number }> {
    return this.request("/v1/health");
  }

  createTrial(config: object): Promise<TrialStatus> {
    return this.post("/v1/trials", { config });
  }

  getTrial(trialId: string): Promise<TrialStatus> {
    return this.request(`/v1/trials/${encodeURIComponent(trialId)}`);
  }

  submitObservations(
    trialId: string,
    submission: ObservationSubmission,
  ): Promise<TrialStatus> {
    return this.post(
      `/v1/trials/${encodeURIComponent(trialId)}/observations`,
      submission,
    );
  }

  posterior(trialId: string, stratum: number): Promise<PosteriorPayload> {
    return this.request(
      `/v1/trials/${encodeURIComponent(trialId)}/posterior?stratum=${stratum}`,
    );
  }

  recommendation(
    trialId: string,
    samples = 1000,
    seed = 0,
  ): Promise<RecommendationPayload> {
    return this.request(
      `/v1/trials/${encodeURIComponent(trialId)}/recommendation?samples=${samples}&seed=${seed}`,
    );
  }

  events(trialId: string, since = -1): Promise<EventsPage> {
    return this.request(
      `/v1/trials/${encodeURIComponent(trialId)}/events?since=${since}`,
    );
  }
}
