import type { ProgressPayload, ReviewApi } from "./api.js";
import { clear, el } from "./dom.js";
import { ConflictInspectorView } from "./views/conflicts.js";
import { FunnelView } from "./views/funnel.js";
import { PromptBoard } from "./views/prompts.js";
import { VerificationQueueView } from "./views/verification.js";
import { FnWorkbenchView } from "./views/workbench.js";

const TABS = ["funnel", "prompts", "verification", "conflicts", "workbench"] as const;
export type Tab = (typeof TABS)[number];

export class App {
  private strip!: HTMLElement;
  private panel!: HTMLElement;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(private api: ReviewApi) {}

  mount(root: HTMLElement): void {
    clear(root);
    this.strip = el("div", { class: "progress-strip" });
    const nav = el("nav", { class: "tabs" });
    for (const tab of TABS) {
      const b = el("button", { type: "button", "data-tab": tab }, tab);
      b.addEventListener("click", () => {
        void this.show(tab);
      });
      nav.append(b);
    }
    this.panel = el("main", { class: "panel" });
    root.append(el("header", { class: "top" }, el("h1", {}, "screening review"), this.strip), nav, this.panel);
  }

  async show(tab: Tab): Promise<void> {
    clear(this.panel);
    switch (tab) {
      case "funnel":
        return new FunnelView(this.api, this.panel).load();
      case "prompts":
        return new PromptBoard(this.api, this.panel).load();
      case "verification":
        return new VerificationQueueView(this.api, this.panel).load();
      case "conflicts":
        return new ConflictInspectorView(this.api, this.panel).load();
      case "workbench":
        return new FnWorkbenchView(this.api, this.panel).load();
    }
  }

  async refreshProgress(): Promise<void> {
    let progress: ProgressPayload;
    try {
      progress = await this.api.progress();
    } catch (err: any) {
      clear(this.strip).append(el("span", { class: "stage stale" }, `progress unavailable: ${err.message}`));
      return;
    }
    clear(this.strip);
    for (const [stage, s] of Object.entries(progress.stages)) {
      const status = s.closed
        ? "closed"
        : `${s.decided} decided, ${s.parked} parked` + (s.pending === null ? "" : `, ${s.pending} pending`);
      this.strip.append(
        el("span", { class: s.closed ? "stage closed" : "stage", "data-stage": stage }, `${stage}: ${status}`),
      );
    }
  }

  // all state is server-side, so a plain poll keeps the strip honest
  startPolling(intervalMs = 5000): void {
    this.stopPolling();
    void this.refreshProgress();
    this.timer = setInterval(() => {
      void this.refreshProgress();
    }, intervalMs);
  }

  stopPolling(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }
}
