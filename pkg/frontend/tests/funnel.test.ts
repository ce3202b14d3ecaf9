import { afterEach, describe, expect, it, vi } from "vitest";

import { ReviewApi } from "../src/api.js";
import { renderFunnel, FunnelView } from "../src/views/funnel.js";
import { clone, FakeReviewServer, REPLAY_FUNNEL } from "./fakes.js";

afterEach(() => {
  vi.unstubAllGlobals();
  document.body.innerHTML = "";
});

function mount(): HTMLElement {
  const root = document.createElement("div");
  document.body.append(root);
  return root;
}

function cellText(root: HTMLElement, source: string, column: string): string | null {
  const cell = root.querySelector(`[data-cell="${source}:${column}"]`);
  return cell ? cell.textContent : null;
}

describe("FunnelView", () => {
  it("renders every replay grid cell byte-for-byte from the payload", () => {
    const payload = clone(REPLAY_FUNNEL);
    const root = mount();
    renderFunnel(root, payload);

    for (const [source, row] of Object.entries(payload.rows)) {
      for (const column of payload.columns) {
        expect(cellText(root, source, column)).toBe(String(row[column]));
      }
    }
    for (const column of payload.columns) {
      expect(cellText(root, "total", column)).toBe(String(payload.totals[column]));
    }

    // pin the reference numbers so the fixture cannot drift quietly
    expect(cellText(root, "ACM", "raw")).toBe("659");
    expect(cellText(root, "IEEE", "quality_control")).toBe("247");
    expect(cellText(root, "Scopus", "screening")).toBe("88");
    expect(cellText(root, "Springer", "relevance")).toBe("13");
    expect(cellText(root, "total", "raw")).toBe("1709");
    expect(cellText(root, "total", "processed")).toBe("1331");
    expect(cellText(root, "total", "quality_control")).toBe("796");
    expect(cellText(root, "total", "screening")).toBe("265");
    expect(cellText(root, "total", "relevance")).toBe("127");
  });

  it("keeps the server's column and row order", () => {
    const root = mount();
    renderFunnel(root, clone(REPLAY_FUNNEL));

    const headers = [...root.querySelectorAll("thead th")].map((th) => th.textContent);
    expect(headers).toEqual(["source", ...REPLAY_FUNNEL.columns]);

    const rowHeads = [...root.querySelectorAll("tbody th")].map((th) => th.textContent);
    expect(rowHeads).toEqual(Object.keys(REPLAY_FUNNEL.rows));
  });

  it("shows normalization losses and merge counts from the payload", () => {
    const root = mount();
    renderFunnel(root, clone(REPLAY_FUNNEL));
    const notes = root.querySelector(".funnel-notes")?.textContent ?? "";
    expect(notes).toContain("ACM: 20 rejected in normalization");
    expect(notes).toContain("Springer: 100 merged as duplicates");
  });

  it("loads the grid through the API client", async () => {
    const server = new FakeReviewServer({ funnel: REPLAY_FUNNEL });
    vi.stubGlobal("fetch", server.fetch);

    const root = mount();
    await new FunnelView(new ReviewApi(), root).load();

    expect(server.calls).toEqual(["GET /funnel"]);
    expect(cellText(root, "ACM", "raw")).toBe("659");
  });

  it("surfaces a fetch failure instead of rendering a stale grid", async () => {
    const server = new FakeReviewServer({});
    vi.stubGlobal("fetch", server.fetch);

    const root = mount();
    await new FunnelView(new ReviewApi(), root).load();

    expect(root.querySelector("table")).toBeNull();
    expect(root.querySelector(".error")?.textContent).toContain("funnel unavailable");
  });
});
