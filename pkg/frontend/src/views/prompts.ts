import { ApiError, type PromptsPayload, type ReviewApi } from "../api.js";
import { button, clear, el } from "../dom.js";

/**
 * Prompt approval board.
 *
 * One card per (phase, role) prompt with its text, generation round count,
 * and the reviewer controls. A phase's "run eligible" indicator mirrors the
 * eligibility flags the server sends; the client never works out
 * eligibility from the entry states itself.
 *
 * Approving or rejecting flips the badge optimistically, then reconciles
 * with the server response. A 409 means another tab got there first: the
 * board refetches and shows whatever the server recorded.
 */
export class PromptBoard {
  private payload: PromptsPayload | null = null;
  private errors = new Map<string, string>();
  reviewer = "";

  constructor(
    private api: ReviewApi,
    private root: HTMLElement,
  ) {}

  async load(): Promise<void> {
    try {
      this.payload = await this.api.prompts();
    } catch (err: any) {
      clear(this.root).append(
        el("p", { class: "error" }, `prompts unavailable: ${err.message}`),
      );
      return;
    }
    this.render();
  }

  private async refetch(): Promise<void> {
    this.payload = await this.api.prompts();
    this.render();
  }

  async decide(phase: string, role: string, decision: string, note = ""): Promise<void> {
    if (!this.payload) return;
    const key = `${phase}:${role}`;
    const entry = this.payload.entries.find((e) => e.phase === phase && e.role === role);
    if (!entry) return;

    const before = entry.approval;
    this.errors.delete(key);
    entry.approval = { ...before, state: decision };
    this.render();

    try {
      const result = await this.api.approvePrompt(phase, role, {
        decision,
        reviewer: this.reviewer,
        note,
      });
      entry.approval = { ...entry.approval, state: result.state };
      this.payload.eligibility[result.phase] = result.phase_eligible;
      this.render();
      // pick up reviewer/note/at exactly as the server persisted them
      await this.refetch();
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.errors.set(key, `decision already recorded elsewhere: ${err.message}`);
        await this.refetch();
        return;
      }
      entry.approval = before;
      this.errors.set(key, err instanceof ApiError ? err.message : String(err));
      this.render();
    }
  }

  private render(): void {
    if (!this.payload) return;
    clear(this.root);

    const reviewerInput = el("input", {
      class: "reviewer",
      type: "text",
      placeholder: "reviewer id",
      value: this.reviewer,
    });
    reviewerInput.addEventListener("input", () => {
      this.reviewer = reviewerInput.value;
    });
    this.root.append(el("div", { class: "board-head" }, el("label", {}, "Reviewing as "), reviewerInput));

    const strip = el("div", { class: "eligibility" });
    for (const [phase, eligible] of Object.entries(this.payload.eligibility)) {
      strip.append(
        el(
          "span",
          {
            class: eligible ? "gate open" : "gate waiting",
            "data-phase": phase,
            "data-eligible": String(eligible),
          },
          `${phase}: ${eligible ? "run eligible" : "awaiting prompt approval"}`,
        ),
      );
    }
    this.root.append(strip);

    for (const entry of this.payload.entries) {
      const key = `${entry.phase}:${entry.role}`;
      const card = el("article", { class: "prompt-card", "data-key": key });
      card.append(
        el(
          "header",
          {},
          el("strong", {}, `${entry.phase} / ${entry.role}`),
          el(
            "span",
            { class: `badge ${entry.approval.state}`, "data-approval": key },
            entry.approval.state,
          ),
        ),
      );
      const rounds = entry.iterations === 1 ? "round" : "rounds";
      card.append(el("p", { class: "iterations" }, `refined over ${entry.iterations} generation ${rounds}`));
      card.append(el("pre", { class: "prompt-text" }, entry.text));
      if (entry.approval.reviewer) {
        const at = entry.approval.at ? ` at ${entry.approval.at}` : "";
        card.append(el("p", { class: "meta" }, `approved by ${entry.approval.reviewer}${at}`));
      }
      if (entry.approval.note) {
        card.append(el("p", { class: "note" }, `note: ${entry.approval.note}`));
      }
      const problem = this.errors.get(key);
      if (problem) {
        card.append(el("p", { class: "error" }, problem));
      }
      if (entry.approval.state !== "approved") {
        const noteInput = el("input", {
          class: "note-input",
          type: "text",
          placeholder: "rejection note",
        });
        card.append(
          el(
            "div",
            { class: "controls" },
            button("Approve", "approve", () => {
              void this.decide(entry.phase, entry.role, "approved");
            }),
            button("Reject", "reject", () => {
              void this.decide(entry.phase, entry.role, "rejected", noteInput.value);
            }),
            noteInput,
          ),
        );
      }
      this.root.append(card);
    }
  }
}
