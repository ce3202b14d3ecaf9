import { afterEach, describe, expect, it, vi } from "vitest";

import { ReviewApi } from "../src/api.js";
import { FnWorkbenchView } from "../src/views/workbench.js";
import { FakeReviewServer, settle } from "./fakes.js";

afterEach(() => {
  vi.unstubAllGlobals();
  document.body.innerHTML = "";
});

const ids = (prefix: string, n: number) =>
  Array.from({ length: n }, (_, i) => `${prefix}${String(i).padStart(3, "0")}`);

// the reference audit: 50 + 50 drawn from 669 exclusions, one Include found
function auditServer(): FakeReviewServer {
  return new FakeReviewServer({
    samples: [
      { stage: "screening", seed: 17, record_ids: ids("scr", 50) },
      { stage: "relevance", seed: 17, record_ids: ids("rel", 50) },
    ],
    population: 669,
    interval: [0.0017674320641406505, 0.054486196178705315],
    countInterval: [1.182412050910095, 36.451265243553856],
  });
}

async function mountBench(server: FakeReviewServer): Promise<{ view: FnWorkbenchView; root: HTMLElement }> {
  vi.stubGlobal("fetch", server.fetch);
  const root = document.createElement("div");
  document.body.append(root);
  const view = new FnWorkbenchView(new ReviewApi(), root);
  const input = () => {
    const found = root.querySelector<HTMLInputElement>("input.reviewer");
    if (found) {
      found.value = "rt";
      found.dispatchEvent(new Event("input"));
    }
  };
  await view.load();
  input();
  return { view, root };
}

function clickLabel(root: HTMLElement, recordId: string, label: "include" | "exclude"): void {
  const row = root.querySelector(`li[data-record="${recordId}"]`);
  const toggle = row?.querySelector<HTMLButtonElement>(`button.${label}`);
  if (!toggle) throw new Error(`no ${label} toggle for ${recordId}`);
  toggle.click();
}

function remaining(root: HTMLElement, stage: string): string | null {
  return root.querySelector(`[data-remaining="${stage}"]`)?.textContent ?? null;
}

describe("FnWorkbenchView", () => {
  it("shows both sample sheets with their unlabeled counts", async () => {
    const { root } = await mountBench(auditServer());

    expect(remaining(root, "screening")).toBe("50 of 50 awaiting labels");
    expect(remaining(root, "relevance")).toBe("50 of 50 awaiting labels");
    expect(root.querySelectorAll("li[data-record]")).toHaveLength(100);
    expect(root.querySelector(".estimate-pending")?.textContent).toContain("100 to go");
    expect(root.querySelector(".estimate-panel")).toBeNull();
  });

  it("labeling the whole 100-record audit with one Include shows 7 missed", async () => {
    const server = auditServer();
    const { root } = await mountBench(server);

    clickLabel(root, "rel000", "include");
    await settle();
    expect(remaining(root, "relevance")).toBe("49 of 50 awaiting labels");
    expect(root.querySelector('li[data-record="rel000"] .badge')?.textContent).toBe("Include");

    for (const rid of ids("rel", 50).slice(1)) {
      clickLabel(root, rid, "exclude");
      await settle();
    }
    for (const rid of ids("scr", 50)) {
      clickLabel(root, rid, "exclude");
      await settle();
    }

    expect(remaining(root, "screening")).toBe("0 of 50 awaiting labels");
    expect(remaining(root, "relevance")).toBe("0 of 50 awaiting labels");

    const panel = root.querySelector(".estimate-panel");
    expect(panel).not.toBeNull();
    expect(panel?.querySelector('[data-field="extrapolated"]')?.textContent).toBe("7");
    expect(panel?.querySelector('[data-field="pooled_rate"]')?.textContent).toBe("0.01");
    expect(panel?.querySelector('[data-field="population"]')?.textContent).toBe("669");
    expect(panel?.querySelector('[data-stage="screening"]')?.textContent).toBe(
      "screening: 0 missed of 50 sampled",
    );
    expect(panel?.querySelector('[data-stage="relevance"]')?.textContent).toBe(
      "relevance: 1 missed of 50 sampled",
    );
    // interval bounds print exactly as the server sent them
    expect(panel?.querySelector(".interval")?.textContent).toBe(
      "95% interval: rate [0.0017674320641406505, 0.054486196178705315], " +
        "count [1.182412050910095, 36.451265243553856]",
    );
  });

  it("locks a label once the server has it", async () => {
    const server = auditServer();
    const { view, root } = await mountBench(server);

    clickLabel(root, "scr000", "exclude");
    await settle();

    const row = root.querySelector('li[data-record="scr000"]');
    expect(row?.querySelector(".badge")?.textContent).toBe("Exclude");
    expect(row?.querySelector("button")).toBeNull();

    // a direct relabel attempt is refused by the server and surfaced
    await view.label("scr000", "Include");
    expect(root.querySelector('li[data-record="scr000"] .error')?.textContent).toContain(
      "already has a manual label",
    );
    expect(root.querySelector('li[data-record="scr000"] .badge')?.textContent).toBe("Exclude");
  });

  it("surfaces a 422 for an invalid label inline", async () => {
    const { view, root } = await mountBench(auditServer());

    await view.label("scr000", "Maybe");

    expect(root.querySelector('li[data-record="scr000"] .error')?.textContent).toBe(
      "not a valid label: 'Maybe'",
    );
    expect(remaining(root, "screening")).toBe("50 of 50 awaiting labels");
  });

  it("draws a missing sample through the API and renders the sheet", async () => {
    const server = new FakeReviewServer({
      samples: [{ stage: "screening", seed: 17, record_ids: ids("scr", 50) }],
      population: 669,
    });
    const { root } = await mountBench(server);

    const form = root.querySelector(".draw-form");
    expect(form).not.toBeNull();
    expect([...form!.querySelectorAll("option")].map((o) => o.textContent)).toEqual(["relevance"]);

    form!.querySelector<HTMLButtonElement>("button.draw")!.click();
    await settle();

    expect(server.calls).toContain("POST /fn/samples");
    expect(remaining(document.body, "relevance")).toBe("50 of 50 awaiting labels");
    // both stages drawn now, so the form is gone
    expect(document.body.querySelector(".draw-form")).toBeNull();
  });

  it("keeps the draw form with an inline error when the server refuses", async () => {
    const server = new FakeReviewServer({ samples: [], population: 669 });
    const { root } = await mountBench(server);

    const form = root.querySelector(".draw-form")!;
    form.querySelector<HTMLInputElement>("input.size")!.value = "5";
    form.querySelector<HTMLButtonElement>("button.draw")!.click();
    await settle();

    expect(root.querySelector(".draw-form .error")?.textContent).toContain("below the minimum");
  });
});
