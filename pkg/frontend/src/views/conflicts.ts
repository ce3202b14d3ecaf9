import type { ConflictRow, ReviewApi, StageOutcome, TranscriptPayload } from "../api.js";
import { button, clear, el } from "../dom.js";

// Dialogue inspector for records where the two agents disagreed. The
// reasoning text renders verbatim, round by round, with the labels each
// agent held after speaking. Nothing is summarized or truncated.

function resolutionBadge(outcome: StageOutcome): HTMLElement {
  const transcript = outcome.transcript;
  if (transcript && transcript.resolution.kind === "agreement") {
    return el(
      "span",
      { class: "badge agreement" },
      `agreed on ${transcript.resolution.label} in round ${transcript.resolution.round}`,
    );
  }
  if (transcript && transcript.resolution.kind === "inclusion_default") {
    return el(
      "span",
      { class: "badge default-include" },
      `no agreement after ${transcript.rounds.length} rounds: ${outcome.label} by default`,
    );
  }
  return el("span", { class: "badge" }, outcome.mechanism);
}

export class ConflictInspectorView {
  private rows: ConflictRow[] = [];

  constructor(
    private api: ReviewApi,
    private root: HTMLElement,
  ) {}

  async load(): Promise<void> {
    try {
      this.rows = await this.api.conflicts();
    } catch (err: any) {
      clear(this.root).append(el("p", { class: "error" }, `conflicts unavailable: ${err.message}`));
      return;
    }
    this.render();
  }

  async inspect(recordId: string, stage: string): Promise<void> {
    const panel = this.root.querySelector<HTMLElement>(".transcript-panel");
    if (!panel) return;
    clear(panel);
    let payload: TranscriptPayload;
    try {
      payload = await this.api.conflictTranscript(recordId, stage);
    } catch (err: any) {
      panel.append(el("p", { class: "error" }, `transcript unavailable: ${err.message}`));
      return;
    }

    for (const entry of payload.transcripts) {
      const outcome = entry.outcome;
      const section = el(
        "section",
        { class: "transcript", "data-record": recordId, "data-stage": entry.stage },
        el("header", {}, el("strong", {}, `${recordId} / ${entry.stage}`), resolutionBadge(outcome)),
      );

      const openers = el("div", { class: "openers" });
      for (const decision of outcome.decisions) {
        openers.append(
          el(
            "article",
            { class: "opener" },
            el("p", { class: "who" }, `${decision.role} (${decision.model}): ${decision.verdict.label}`),
            el("blockquote", {}, decision.verdict.reasoning),
          ),
        );
      }
      section.append(openers);

      for (const [i, round] of (outcome.transcript?.rounds ?? []).entries()) {
        const roundEl = el("div", { class: "round", "data-round": String(i + 1) });
        roundEl.append(el("h4", {}, `round ${i + 1}`));
        roundEl.append(
          el(
            "article",
            { class: "turn challenger" },
            el("p", { class: "who" }, round.challenger),
            el("blockquote", {}, round.challenger_message),
          ),
          el(
            "article",
            { class: "turn defender" },
            el("p", { class: "who" }, round.defender),
            el("blockquote", {}, round.defender_message),
          ),
          el(
            "p",
            { class: "post-labels" },
            `after this round: assistant ${round.labels[0]}, evaluator ${round.labels[1]}`,
          ),
        );
        section.append(roundEl);
      }
      panel.append(section);
    }
  }

  private render(): void {
    clear(this.root);
    if (this.rows.length === 0) {
      this.root.append(el("p", { class: "empty" }, "no conflicts recorded"));
      return;
    }

    const list = el("table", { class: "conflict-list" });
    list.append(
      el(
        "thead",
        {},
        el(
          "tr",
          {},
          el("th", {}, "record"),
          el("th", {}, "stage"),
          el("th", {}, "resolution"),
          el("th", {}, "final label"),
          el("th", {}, ""),
        ),
      ),
    );
    const body = el("tbody");
    for (const row of this.rows) {
      const summary =
        row.mechanism === "dialogue_agreement"
          ? `agreement in round ${row.round}`
          : `${row.rounds} rounds, no agreement`;
      body.append(
        el(
          "tr",
          { "data-conflict": `${row.record_id}:${row.stage}` },
          el("td", {}, row.record_id),
          el("td", {}, row.stage),
          el("td", {}, summary),
          el("td", {}, row.label),
          el(
            "td",
            {},
            button("Inspect", "inspect", () => {
              void this.inspect(row.record_id, row.stage);
            }),
          ),
        ),
      );
    }
    list.append(body);
    this.root.append(list);
    this.root.append(el("div", { class: "transcript-panel" }));
  }
}
