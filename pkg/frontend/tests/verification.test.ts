import { afterEach, describe, expect, it, vi } from "vitest";

import { ReviewApi } from "../src/api.js";
import { VerificationQueueView } from "../src/views/verification.js";
import { FakeReviewServer, settle } from "./fakes.js";

afterEach(() => {
  vi.unstubAllGlobals();
  document.body.innerHTML = "";
});

function queueServer(): FakeReviewServer {
  return new FakeReviewServer({
    queue: [
      {
        record_id: "rec-17",
        title: "Adaptive test oracles for embedded controllers",
        abstract: null,
        label: "Exclude",
        flags: ["needs_human_verification"],
      },
      {
        record_id: "rec-41",
        title: null,
        abstract: null,
        label: "Exclude",
        flags: ["needs_human_verification"],
      },
    ],
  });
}

async function mountQueue(server: FakeReviewServer): Promise<{ view: VerificationQueueView; root: HTMLElement }> {
  vi.stubGlobal("fetch", server.fetch);
  const root = document.createElement("div");
  document.body.append(root);
  const view = new VerificationQueueView(new ReviewApi(), root);
  await view.load();
  const input = root.querySelector<HTMLInputElement>("input.reviewer");
  if (input) {
    input.value = "vr";
    input.dispatchEvent(new Event("input"));
  }
  return { view, root };
}

describe("VerificationQueueView", () => {
  it("lists excluded records that are missing an abstract", async () => {
    const { root } = await mountQueue(queueServer());

    const cards = root.querySelectorAll("article.queue-card");
    expect(cards).toHaveLength(2);
    const first = cards[0];
    expect(first.querySelector("header strong")?.textContent).toBe(
      "Adaptive test oracles for embedded controllers",
    );
    expect(first.querySelector(".abstract")?.textContent).toBe("no abstract on file");
    expect(first.querySelector(".flags")?.textContent).toBe("needs_human_verification");
    // a row without a title falls back to the record id
    expect(cards[1].querySelector("header strong")?.textContent).toBe("rec-41");
  });

  it("restores a record with an Include manual label", async () => {
    const server = queueServer();
    const { root } = await mountQueue(server);

    root.querySelector<HTMLButtonElement>('[data-record="rec-17"] button.restore')!.click();
    await settle();

    expect(server.labels.get("rec-17")).toEqual({ label: "Include", by: "vr", note: "" });
    const resolved = root.querySelector('[data-manual="rec-17"]');
    expect(resolved?.textContent).toBe("restored as Include by vr");
    expect(root.querySelector('[data-record="rec-17"] button')).toBeNull();
  });

  it("can uphold the exclusion instead", async () => {
    const server = queueServer();
    const { root } = await mountQueue(server);

    root.querySelector<HTMLButtonElement>('[data-record="rec-41"] button.uphold')!.click();
    await settle();

    expect(root.querySelector('[data-manual="rec-41"]')?.textContent).toBe(
      "exclusion upheld as Exclude by vr",
    );
  });

  it("surfaces a 422 when no reviewer id is set", async () => {
    const server = queueServer();
    vi.stubGlobal("fetch", server.fetch);
    const root = document.createElement("div");
    document.body.append(root);
    const view = new VerificationQueueView(new ReviewApi(), root);
    await view.load();

    root.querySelector<HTMLButtonElement>('[data-record="rec-17"] button.restore')!.click();
    await settle();

    expect(root.querySelector('[data-record="rec-17"] .error')?.textContent).toBe(
      "a reviewer id is required",
    );
    expect(root.querySelector('[data-record="rec-17"] button.restore')).not.toBeNull();
  });

  it("reloads on a 409 so the other reviewer's decision shows", async () => {
    const server = queueServer();
    const { view, root } = await mountQueue(server);

    // a second session labels the record between render and click
    server.labels.set("rec-17", { label: "Exclude", by: "other", note: "" });
    await view.label("rec-17", "Include");

    expect(root.querySelector('[data-record="rec-17"] .error')?.textContent).toContain(
      "already has a manual label",
    );
    expect(root.querySelector('[data-manual="rec-17"]')?.textContent).toBe(
      "exclusion upheld as Exclude by other",
    );
  });

  it("shows an empty-queue note instead of a blank panel", async () => {
    const { root } = await mountQueue(new FakeReviewServer({ queue: [] }));
    expect(root.querySelector(".empty")?.textContent).toBe("nothing waiting on verification");
  });
});
