// Wire types for the /v1 conduct API. Field names match the server payloads
// exactly; the UI renders these values verbatim and never recomputes
// statistics on the client.

export type StratumStatus =
  | "active"
  | "stopped_efficacy"
  | "stopped_toxicity"
  | "budget_exhausted";

export interface TrialConfigDoc {
  candidate_grid?: number[][];
  grid_spacing?: number;
  max_patients: number;
  strata: number[][];
  toxicity_threshold?: number | number[];
  safety_confidence?: number | number[];
  efficacy_stop_threshold?: number | number[];
  replication?: number | number[];
  rate?: number | number[];
  exclusion_side?: number | number[];
  consecutive_required?: number | null;
  toxicity_stop_confidence?: number;
  escalate?: boolean;
  initial_doses?: number[][][] | null;
  fit_budget?: number;
}

export interface StratumSummary {
  index: number;
  covariates: number[];
  status: StratumStatus;
  pending_dose: number[] | null;
  queued: Array<number[] | null>;
  replication: number;
  patients_used: number;
  allocation: number;
  cohorts: number;
  efficacy_counter: number;
  toxicity_counter: number;
  region_iteration: number;
  region_fully_expanded: boolean;
}

export interface TrialStatus {
  trial_id: string;
  read_only: boolean;
  diagnostic: string | null;
  complete: boolean | null;
  total_patients: number | null;
  event_count: number | null;
  strata: StratumSummary[];
  config: TrialConfigDoc | null;
  // present on observation responses only
  accepted?: boolean;
  sequence?: number;
}

export interface ObservationSubmission {
  stratum: number;
  dose: number[];
  responses: Array<[number, number]>;
  idempotency_key: string;
}

export interface GridCell {
  dose: number[];
  mu_f: number;
  sd_f: number;
  mu_g: number;
  sd_g: number;
  safety_probability: number;
  cei: number;
}

export interface RegionInfo {
  iteration: number;
  rate: number;
  fully_expanded: boolean;
  evaluated: number[][];
}

export interface PosteriorPayload {
  trial_id: string;
  stratum: number;
  covariates: number[];
  threshold: number;
  confidence: number;
  pending_dose: number[] | null;
  status: StratumStatus;
  region: RegionInfo;
  prior: boolean;
  incumbent: number | null;
  grid: GridCell[];
}

export interface DoseFrequency {
  dose: number[];
  frequency: number;
}

export interface StratumRecommendation {
  stratum: number;
  point_estimate: number[] | null;
  incumbent: number | null;
  max_cei: number | null;
  safe_set_size: number;
  feasible_fraction: number;
  distribution: DoseFrequency[];
}

export interface RecommendationPayload {
  trial_id: string;
  samples: number;
  seed: number;
  recommendations: StratumRecommendation[];
}

export interface TrialEvent {
  trial_id: string;
  sequence: number;
  recorded_at: string;
  kind: string;
  payload: Record<string, unknown>;
}

export interface EventsPage {
  trial_id: string;
  events: TrialEvent[];
  log_error: string | null;
}
