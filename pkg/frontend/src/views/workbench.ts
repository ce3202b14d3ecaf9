import {
  ApiError,
  type FnEstimatePayload,
  type FnSampleSheet,
  type ReviewApi,
} from "../api.js";
import { button, clear, el } from "../dom.js";

/**
 * False-negative audit workbench.
 *
 * Shows each drawn sample as a label sheet. Every Include/Exclude click is
 * posted as a manual label; the sheet and the remaining-unlabeled count come
 * back from the server on reload, and once no sample has missing labels the
 * estimate panel appears with the server's numbers printed as-is.
 *
 * A label that is already persisted renders locked: the server treats
 * relabels as conflicts, so the toggle disappears after the first decision.
 */
export class FnWorkbenchView {
  private samples: FnSampleSheet[] = [];
  private estimate: FnEstimatePayload | null = null;
  private errors = new Map<string, string>();
  private drawError = "";
  reviewer = "";

  constructor(
    private api: ReviewApi,
    private root: HTMLElement,
  ) {}

  async load(): Promise<void> {
    try {
      this.samples = await this.api.fnSamples();
    } catch (err: any) {
      clear(this.root).append(el("p", { class: "error" }, `samples unavailable: ${err.message}`));
      return;
    }
    this.estimate = null;
    if (this.samples.length > 0 && this.samples.every((s) => s.missing.length === 0)) {
      try {
        this.estimate = await this.api.fnEstimate();
      } catch (err) {
        if (!(err instanceof ApiError)) throw err;
        // labels raced in between; the sheet still shows what is missing
      }
    }
    this.render();
  }

  async label(recordId: string, label: string): Promise<void> {
    this.errors.delete(recordId);
    try {
      await this.api.setManualLabel(recordId, { label, by: this.reviewer });
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
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

  async draw(stage: string, n: number): Promise<void> {
    this.drawError = "";
    try {
      await this.api.drawFnSample({ stage, n });
    } catch (err) {
      this.drawError = err instanceof ApiError ? err.message : String(err);
      this.render();
      return;
    }
    await this.load();
  }

  private renderEstimate(): HTMLElement {
    const est = this.estimate;
    if (!est) {
      const missing = this.samples.reduce((acc, s) => acc + s.missing.length, 0);
      return el(
        "p",
        { class: "estimate-pending" },
        this.samples.length === 0
          ? "draw a sample to start the audit"
          : `estimate available once every sampled record is labelled (${missing} to go)`,
      );
    }
    const panel = el("section", { class: "estimate-panel" }, el("h3", {}, "False-negative estimate"));
    for (const stage of est.per_stage) {
      panel.append(
        el(
          "p",
          { class: "per-stage", "data-stage": stage.stage },
          `${stage.stage}: ${stage.fn} missed of ${stage.sampled} sampled`,
        ),
      );
    }
    panel.append(
      el("p", {}, "pooled miss rate: ", el("strong", { "data-field": "pooled_rate" }, String(est.pooled_rate))),
      el("p", {}, "excluded population: ", el("strong", { "data-field": "population" }, String(est.population))),
      el(
        "p",
        {},
        "estimated missed relevant records: ",
        el("strong", { "data-field": "extrapolated" }, String(est.extrapolated)),
      ),
      el(
        "p",
        { class: "interval" },
        `95% interval: rate [${est.interval[0]}, ${est.interval[1]}], ` +
          `count [${est.count_interval[0]}, ${est.count_interval[1]}]`,
      ),
    );
    return panel;
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

    const drawn = new Set(this.samples.map((s) => s.stage));
    const undrawn = ["screening", "relevance"].filter((s) => !drawn.has(s));
    if (undrawn.length > 0) {
      const stageSelect = el("select", { class: "stage" });
      for (const stage of undrawn) {
        stageSelect.append(el("option", { value: stage }, stage));
      }
      const sizeInput = el("input", { class: "size", type: "number", value: "50", min: "1" });
      const form = el(
        "div",
        { class: "draw-form" },
        stageSelect,
        sizeInput,
        button("Draw sample", "draw", () => {
          void this.draw(stageSelect.value, Number(sizeInput.value));
        }),
      );
      if (this.drawError) {
        form.append(el("p", { class: "error" }, this.drawError));
      }
      this.root.append(form);
    }

    for (const sample of this.samples) {
      const sheet = el("section", { class: "sample-sheet", "data-sample": sample.stage });
      sheet.append(
        el(
          "header",
          {},
          el("strong", {}, `${sample.stage} sample`),
          el("span", { class: "meta" }, `${sample.record_ids.length} records, seed ${sample.seed}`),
        ),
      );
      sheet.append(
        el(
          "p",
          { class: "remaining", "data-remaining": sample.stage },
          `${sample.missing.length} of ${sample.record_ids.length} awaiting labels`,
        ),
        el("p", { class: "fn-so-far" }, `Include labels so far: ${sample.fn_count}`),
      );

      const rows = el("ul", { class: "sample-rows" });
      for (const recordId of sample.record_ids) {
        const row = el("li", { "data-record": recordId }, el("span", { class: "rid" }, recordId));
        const existing = sample.labels[recordId];
        if (existing) {
          row.append(el("span", { class: `badge ${existing.toLowerCase()}` }, existing));
        } else {
          row.append(
            button("Include", "include", () => {
              void this.label(recordId, "Include");
            }),
            button("Exclude", "exclude", () => {
              void this.label(recordId, "Exclude");
            }),
          );
        }
        const problem = this.errors.get(recordId);
        if (problem) {
          row.append(el("span", { class: "error" }, problem));
        }
        rows.append(row);
      }
      sheet.append(rows);
      this.root.append(sheet);
    }

    this.root.append(this.renderEstimate());
  }
}
