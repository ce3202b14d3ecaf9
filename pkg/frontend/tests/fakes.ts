import type {
  ConflictRow,
  FunnelPayload,
  ManualLabel,
  ProgressPayload,
  PromptEntry,
  TranscriptPayload,
  VerificationRow,
} from "../src/api.js";

// The /funnel payload a full scripted replay of the reference corpus
// produces, captured verbatim (including the server's row order).
export const REPLAY_FUNNEL: FunnelPayload = {
  columns: ["raw", "processed", "quality_control", "screening", "relevance"],
  rows: {
    Springer: { raw: 276, processed: 116, quality_control: 95, screening: 27, relevance: 13 },
    IEEE: { raw: 289, processed: 284, quality_control: 247, screening: 106, relevance: 55 },
    ACM: { raw: 659, processed: 605, quality_control: 139, screening: 44, relevance: 16 },
    Scopus: { raw: 485, processed: 326, quality_control: 315, screening: 88, relevance: 43 },
  },
  totals: { raw: 1709, processed: 1331, quality_control: 796, screening: 265, relevance: 127 },
  losses: { ACM: 20, IEEE: 2, Scopus: 60, Springer: 60 },
  merges: { Scopus: 99, Springer: 100, ACM: 34, IEEE: 3 },
};

export function clone<T>(value: T): T {
  return JSON.parse(JSON.stringify(value)) as T;
}

function json(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

function problem(status: number, detail: unknown): Response {
  return json({ detail }, status);
}

export interface FakeSample {
  stage: string;
  seed: number;
  record_ids: string[];
}

export interface FakeServerState {
  funnel?: FunnelPayload;
  progress?: ProgressPayload;
  prompts?: PromptEntry[];
  queue?: Omit<VerificationRow, "manual_label">[];
  conflicts?: ConflictRow[];
  transcripts?: Record<string, TranscriptPayload>;
  samples?: FakeSample[];
  population?: number;
  interval?: [number, number];
  countInterval?: [number, number];
  /** records that accept a manual label; defaults to queue + sample members */
  awaiting?: string[];
  /** records that exist but are not necessarily awaiting review */
  known?: string[];
}

/**
 * In-memory stand-in for the review service, close enough to exercise every
 * status code the UI handles. State mutates the same way the real store
 * does: approvals are terminal, manual labels are write-once.
 */
export class FakeReviewServer {
  calls: string[] = [];
  labels = new Map<string, ManualLabel>();
  prompts: PromptEntry[];
  samples: FakeSample[];

  constructor(private state: FakeServerState) {
    this.prompts = clone(state.prompts ?? []);
    this.samples = clone(state.samples ?? []);
  }

  fetch = async (input: RequestInfo | URL, init?: RequestInit): Promise<Response> => {
    const url = new URL(typeof input === "string" ? input : input instanceof URL ? input.href : input.url, "http://fake.test");
    const method = (init?.method ?? "GET").toUpperCase();
    this.calls.push(`${method} ${url.pathname}${url.search}`);
    const body = init?.body ? JSON.parse(String(init.body)) : null;
    return this.route(method, url, body);
  };

  approve(phase: string, role: string, reviewer = "someone else"): void {
    const entry = this.prompts.find((e) => e.phase === phase && e.role === role);
    if (!entry) throw new Error(`no fake prompt ${phase}/${role}`);
    entry.approval = { state: "approved", reviewer, note: "", at: "" };
  }

  private eligibility(): Record<string, boolean> {
    const phases = [...new Set(this.prompts.map((e) => e.phase))];
    const out: Record<string, boolean> = {};
    for (const phase of phases) {
      out[phase] = this.prompts
        .filter((e) => e.phase === phase)
        .every((e) => e.approval.state === "approved");
    }
    return out;
  }

  private awaiting(): Set<string> {
    const ids = new Set(this.state.awaiting ?? []);
    for (const row of this.state.queue ?? []) ids.add(row.record_id);
    for (const sample of this.samples) for (const rid of sample.record_ids) ids.add(rid);
    return ids;
  }

  private sampleSheets() {
    return this.samples.map((sample) => {
      const labels: Record<string, string> = {};
      for (const rid of sample.record_ids) {
        const hit = this.labels.get(rid);
        if (hit) labels[rid] = hit.label;
      }
      const missing = sample.record_ids.filter((rid) => !(rid in labels));
      return {
        stage: sample.stage,
        seed: sample.seed,
        record_ids: [...sample.record_ids],
        labels,
        fn_count: Object.values(labels).filter((l) => l === "Include").length,
        missing,
      };
    });
  }

  private route(method: string, url: URL, body: any): Response {
    const path = url.pathname;

    if (method === "GET" && path === "/funnel") {
      return this.state.funnel ? json(clone(this.state.funnel)) : problem(500, "no funnel configured");
    }
    if (method === "GET" && path === "/progress") {
      return json(clone(this.state.progress ?? { stages: {}, closed: [] }));
    }

    if (method === "GET" && path === "/prompts") {
      return json({ entries: clone(this.prompts), eligibility: this.eligibility() });
    }
    const approval = path.match(/^\/prompts\/([^/]+)\/([^/]+)\/approval$/);
    if (method === "POST" && approval) {
      const [, phase, role] = approval;
      const entry = this.prompts.find((e) => e.phase === phase && e.role === role);
      if (!entry) return problem(404, `no prompt entry for ('${phase}', '${role}')`);
      if (entry.approval.state === "approved") {
        return problem(409, `prompt ('${phase}', '${role}') is already approved`);
      }
      if (body.decision === "approved") {
        if (!body.reviewer) return problem(422, "approval requires a reviewer id");
        entry.approval = { state: "approved", reviewer: body.reviewer, note: "", at: body.at ?? "" };
      } else if (body.decision === "rejected") {
        entry.approval = { state: "rejected", reviewer: "", note: body.note ?? "", at: body.at ?? "" };
      } else {
        return problem(422, `unknown decision: '${body.decision}'`);
      }
      return json({
        phase,
        role,
        state: entry.approval.state,
        phase_eligible: this.eligibility()[phase],
      });
    }

    if (method === "GET" && path === "/queue/verification") {
      const rows = (this.state.queue ?? []).map((row) => ({
        ...clone(row),
        manual_label: this.labels.get(row.record_id) ?? null,
      }));
      return json(rows);
    }

    const manual = path.match(/^\/records\/([^/]+)\/manual-label$/);
    if (method === "POST" && manual) {
      const rid = decodeURIComponent(manual[1]);
      if (!body.by) return problem(422, "a reviewer id is required");
      const folded = String(body.label ?? "").trim().toLowerCase();
      if (folded !== "include" && folded !== "exclude") {
        return problem(422, `not a valid label: '${body.label}'`);
      }
      const awaiting = this.awaiting();
      if (!awaiting.has(rid) && !(this.state.known ?? []).includes(rid)) {
        return problem(404, `unknown record: ${rid}`);
      }
      if (!awaiting.has(rid)) {
        return problem(409, `record ${rid} is not awaiting human review`);
      }
      if (this.labels.has(rid)) {
        return problem(409, `record ${rid} already has a manual label`);
      }
      const label = folded === "include" ? "Include" : "Exclude";
      this.labels.set(rid, { label, by: body.by, note: body.note ?? "" });
      return json({ record_id: rid, ...this.labels.get(rid) });
    }

    if (method === "GET" && path === "/conflicts") {
      return json(clone(this.state.conflicts ?? []));
    }
    const transcript = path.match(/^\/conflicts\/([^/]+)\/transcript$/);
    if (method === "GET" && transcript) {
      const rid = decodeURIComponent(transcript[1]);
      const payload = this.state.transcripts?.[rid];
      if (!payload) return problem(404, `no dialogue transcript for record ${rid}`);
      const stage = url.searchParams.get("stage");
      const transcripts = payload.transcripts.filter((t) => stage === null || t.stage === stage);
      if (transcripts.length === 0) return problem(404, `no dialogue transcript for record ${rid}`);
      return json({ record_id: rid, transcripts: clone(transcripts) });
    }

    if (method === "GET" && path === "/fn/samples") {
      return json(this.sampleSheets());
    }
    if (method === "POST" && path === "/fn/samples") {
      if (body.stage !== "screening" && body.stage !== "relevance") {
        return problem(422, "stage must be one of ['relevance', 'screening']");
      }
      if (this.samples.some((s) => s.stage === body.stage)) {
        return problem(409, `a sample for ${body.stage} was already drawn`);
      }
      if (body.n < 30) return problem(422, `a sample of ${body.n} is below the minimum of 30`);
      const prefix = body.stage.slice(0, 3);
      const record_ids = Array.from({ length: body.n }, (_, i) => `${prefix}${String(i).padStart(3, "0")}`);
      this.samples.push({ stage: body.stage, seed: body.seed ?? 17, record_ids });
      return json({ stage: body.stage, seed: body.seed ?? 17, n: body.n, record_ids });
    }

    if (method === "GET" && path === "/fn/estimate") {
      const sheets = this.sampleSheets();
      if (sheets.length === 0) return problem(409, "no false-negative samples drawn yet");
      const missing = sheets.flatMap((s) => s.missing);
      if (missing.length > 0) return problem(409, { message: "labels incomplete", missing });
      const sampled = sheets.reduce((acc, s) => acc + s.record_ids.length, 0);
      const fn = sheets.reduce((acc, s) => acc + s.fn_count, 0);
      const population = Number(url.searchParams.get("population") ?? this.state.population ?? 0);
      const rate = fn / sampled;
      return json({
        per_stage: sheets.map((s) => ({ stage: s.stage, sampled: s.record_ids.length, fn: s.fn_count })),
        pooled_rate: rate,
        population,
        extrapolated: Math.round(rate * population),
        interval: this.state.interval ?? [0, 0],
        count_interval: this.state.countInterval ?? [0, 0],
      });
    }

    return problem(404, `no route for ${method} ${path}`);
  }
}

export function draftEntry(phase: string, role: string, overrides: Partial<PromptEntry> = {}): PromptEntry {
  return {
    phase,
    role,
    text: `You label records for the ${phase} step as the ${role}.`,
    iterations: 3,
    approval: { state: "draft", reviewer: "", note: "", at: "" },
    ...overrides,
  };
}

export function approvedEntry(phase: string, role: string): PromptEntry {
  return draftEntry(phase, role, {
    approval: { state: "approved", reviewer: "rt", note: "", at: "2026-02-11T09:00:00Z" },
  });
}

/** flush the microtask chains a click kicked off */
export function settle(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}
