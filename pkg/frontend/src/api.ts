/**
 * Typed client for the review service's JSON API.
 *
 * Every view renders straight from these payloads. The server owns all
 * state; nothing in the UI recomputes labels or counts on its own.
 */

export interface FunnelPayload {
  columns: string[];
  rows: Record<string, Record<string, number>>;
  totals: Record<string, number>;
  losses: Record<string, number>;
  merges: Record<string, number>;
}

export interface StageProgress {
  decided: number;
  parked: number;
  pending: number | null;
  closed: boolean;
}

export interface ProgressPayload {
  stages: Record<string, StageProgress>;
  closed: string[];
}

/** state is one of draft | approved | rejected */
export interface Approval {
  state: string;
  reviewer: string;
  note: string;
  at: string;
}

export interface PromptEntry {
  phase: string;
  role: string;
  text: string;
  iterations: number;
  approval: Approval;
}

export interface PromptsPayload {
  entries: PromptEntry[];
  eligibility: Record<string, boolean>;
}

export interface ApprovalResult {
  phase: string;
  role: string;
  state: string;
  phase_eligible: boolean;
}

export interface ManualLabel {
  label: string;
  by: string;
  note: string;
}

export interface VerificationRow {
  record_id: string;
  title: string | null;
  abstract: string | null;
  label: string;
  flags: string[];
  manual_label: ManualLabel | null;
}

export interface ConflictRow {
  record_id: string;
  stage: string;
  label: string;
  mechanism: string;
  round: number | null;
  rounds: number;
}

export interface VerdictPayload {
  label: string;
  reasoning: string;
  confidence?: number;
  criteria_verdicts?: Record<string, boolean>;
}

export interface AgentDecision {
  role: string;
  model: string;
  verdict: VerdictPayload;
  exchange_ref: string;
}

export interface DialogueRound {
  challenger: string;
  challenger_ref: string;
  challenger_message: string;
  defender: string;
  defender_ref: string;
  defender_message: string;
  /** (assistant label, evaluator label) once both spoke in this round */
  labels: string[];
}

export interface DialogueTranscript {
  record_id: string;
  rounds: DialogueRound[];
  resolution: { kind: string; label?: string; round?: number };
}

export interface StageOutcome {
  record_id: string;
  stage: string;
  label: string;
  mechanism: string;
  decisions: AgentDecision[];
  flags: string[];
  round?: number;
  transcript?: DialogueTranscript;
}

export interface Exchange {
  ref: string;
  model: string;
  messages: [string, string][];
  response: string;
  prompt_tokens: number;
  completion_tokens: number;
  latency_ms: number;
  attempts: number;
  error?: string;
}

export interface TranscriptPayload {
  record_id: string;
  transcripts: {
    stage: string;
    outcome: StageOutcome;
    exchanges: Record<string, Exchange | null>;
  }[];
}

export interface FnSampleSheet {
  stage: string;
  seed: number;
  record_ids: string[];
  labels: Record<string, string>;
  fn_count: number;
  missing: string[];
}

export interface FnEstimatePayload {
  per_stage: { stage: string; sampled: number; fn: number }[];
  pooled_rate: number;
  population: number;
  extrapolated: number;
  interval: [number, number];
  count_interval: [number, number];
}

export interface RecordPayload {
  id: string;
  title: string;
  year: number | null;
  abstract: string | null;
  abstract_provenance: string;
  doi: string | null;
  authors: string[];
  venue: string | null;
  pub_type: string;
  url: string | null;
  sources: string[];
}

export interface RecordDetail {
  record: RecordPayload;
  outcomes: Record<string, StageOutcome>;
  manual_label: ManualLabel | null;
}

/** Error responses carry FastAPI's {detail: ...} envelope. */
export class ApiError extends Error {
  readonly status: number;
  readonly detail: unknown;

  constructor(status: number, detail: unknown) {
    super(typeof detail === "string" ? detail : `request failed with status ${status}`);
    this.name = "ApiError";
    this.status = status;
    this.detail = detail;
  }
}

export class ReviewApi {
  private base: string;

  constructor(base = "") {
    this.base = base.replace(/\/+$/, "");
  }

  private async request<T>(path: string, init: RequestInit = {}): Promise<T> {
    const headers: Record<string, string> = { Accept: "application/json" };
    if (init.body !== undefined) {
      headers["Content-Type"] = "application/json";
    }
    const res = await fetch(this.base + path, { ...init, headers });
    let payload: any = null;
    try {
      payload = await res.json();
    } catch {
      // non-JSON body (empty 500s etc.); ApiError below still carries the status
    }
    if (!res.ok) {
      const detail = payload && payload.detail !== undefined ? payload.detail : payload;
      throw new ApiError(res.status, detail);
    }
    return payload as T;
  }

  funnel(): Promise<FunnelPayload> {
    return this.request("/funnel");
  }

  progress(): Promise<ProgressPayload> {
    return this.request("/progress");
  }

  prompts(): Promise<PromptsPayload> {
    return this.request("/prompts");
  }

  approvePrompt(
    phase: string,
    role: string,
    body: { decision: string; reviewer?: string; note?: string },
  ): Promise<ApprovalResult> {
    const path = `/prompts/${encodeURIComponent(phase)}/${encodeURIComponent(role)}/approval`;
    return this.request(path, { method: "POST", body: JSON.stringify(body) });
  }

  verificationQueue(): Promise<VerificationRow[]> {
    return this.request("/queue/verification");
  }

  setManualLabel(
    recordId: string,
    body: { label: string; by: string; note?: string },
  ): Promise<ManualLabel & { record_id: string }> {
    const path = `/records/${encodeURIComponent(recordId)}/manual-label`;
    return this.request(path, { method: "POST", body: JSON.stringify(body) });
  }

  conflicts(): Promise<ConflictRow[]> {
    return this.request("/conflicts");
  }

  conflictTranscript(recordId: string, stage?: string): Promise<TranscriptPayload> {
    let path = `/conflicts/${encodeURIComponent(recordId)}/transcript`;
    if (stage) {
      path += `?stage=${encodeURIComponent(stage)}`;
    }
    return this.request(path);
  }

  fnSamples(): Promise<FnSampleSheet[]> {
    return this.request("/fn/samples");
  }

  drawFnSample(body: { stage: string; n: number; seed?: number }): Promise<{
    stage: string;
    seed: number;
    n: number;
    record_ids: string[];
  }> {
    return this.request("/fn/samples", { method: "POST", body: JSON.stringify(body) });
  }

  fnEstimate(population?: number): Promise<FnEstimatePayload> {
    const path = population === undefined ? "/fn/estimate" : `/fn/estimate?population=${population}`;
    return this.request(path);
  }

  record(recordId: string): Promise<RecordDetail> {
    return this.request(`/records/${encodeURIComponent(recordId)}`);
  }
}
