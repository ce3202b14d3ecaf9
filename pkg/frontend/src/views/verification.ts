import { ApiError, type ReviewApi, type VerificationRow } from "../api.js";
import { button, clear, el } from "../dom.js";

// Records the quality-control agent excluded for a missing abstract, waiting
// on a human look. Restore posts an Include manual label; upholding the
// exclusion posts Exclude. Once a label exists the row is settled and the
// buttons go away (the server refuses relabels).
export class VerificationQueueView {
  private rows: VerificationRow[] = [];
  private errors = new Map<string, string>();
  reviewer = "";

  constructor(
    private api: ReviewApi,
    private root: HTMLElement,
  ) {}

  async load(): Promise<void> {
    try {
      this.rows = await this.api.verificationQueue();
    } catch (err: any) {
      clear(this.root).append(el("p", { class: "error" }, `queue unavailable: ${err.message}`));
      return;
    }
    this.render();
  }

  async label(recordId: string, label: string): Promise<void> {
    this.errors.delete(recordId);
    try {
      await this.api.setManualLabel(recordId, { label, by: this.reviewer });
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // someone else labelled it first; reload shows their decision
        this.errors.set(recordId, err.message);
        await this.load();
        return;
      }
      this.errors.set(recordId, err instanceof ApiError ? err.message : String(err));
      this.render();
      return;
    }
    await this.load();
  }

  private render(): void {
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

    if (this.rows.length === 0) {
      this.root.append(el("p", { class: "empty" }, "nothing waiting on verification"));
      return;
    }

    for (const row of this.rows) {
      const card = el("article", { class: "queue-card", "data-record": row.record_id });
      card.append(
        el(
          "header",
          {},
          el("strong", {}, row.title ?? row.record_id),
          el("span", { class: "badge excluded" }, row.label),
        ),
      );
      card.append(el("p", { class: "meta" }, row.record_id));
      card.append(
        row.abstract
          ? el("p", { class: "abstract" }, row.abstract)
          : el("p", { class: "abstract missing" }, "no abstract on file"),
      );
      card.append(el("p", { class: "flags" }, row.flags.join(", ")));

      const problem = this.errors.get(row.record_id);
      if (problem) {
        card.append(el("p", { class: "error" }, problem));
      }

      if (row.manual_label) {
        const verdict = row.manual_label.label === "Include" ? "restored" : "exclusion upheld";
        card.append(
          el(
            "p",
            { class: "resolved", "data-manual": row.record_id },
            `${verdict} as ${row.manual_label.label} by ${row.manual_label.by}`,
          ),
        );
      } else {
        card.append(
          el(
            "div",
            { class: "controls" },
            button("Restore", "restore", () => {
              void this.label(row.record_id, "Include");
            }),
            button("Uphold exclusion", "uphold", () => {
              void this.label(row.record_id, "Exclude");
            }),
          ),
        );
      }
      this.root.append(card);
    }
  }
}
