import { afterEach, describe, expect, it, vi } from "vitest";

import { ReviewApi, type TranscriptPayload } from "../src/api.js";
import { ConflictInspectorView } from "../src/views/conflicts.js";
import { FakeReviewServer, settle } from "./fakes.js";

afterEach(() => {
  vi.unstubAllGlobals();
  document.body.innerHTML = "";
});

const CHALLENGE_1 =
  "The study reports latency gains but never defines the workload;\nwithout it criterion 2 cannot be checked.";
const DEFENSE_1 = "Section 3.2 pins the workload to the TPC-C mix, which satisfies criterion 2.";

function deadlocked(): TranscriptPayload {
  const round = (n: number) => ({
    challenger: "evaluator",
    challenger_ref: `screening:rec-9:evaluator:r${n}`,
    challenger_message: n === 1 ? CHALLENGE_1 : `Round ${n}: the workload table is still unreferenced.`,
    defender: "assistant",
    defender_ref: `screening:rec-9:assistant:r${n}`,
    defender_message: n === 1 ? DEFENSE_1 : `Round ${n}: table 4 carries the reference.`,
    labels: ["Include", "Exclude"],
  });
  return {
    record_id: "rec-9",
    transcripts: [
      {
        stage: "screening",
        outcome: {
          record_id: "rec-9",
          stage: "screening",
          label: "Include",
          mechanism: "inclusion_default",
          decisions: [
            {
              role: "assistant",
              model: "alpha-large",
              verdict: { label: "Include", reasoning: "Meets criteria 1 and 3; the testbed is physical." },
              exchange_ref: "screening:rec-9:assistant:verdict",
            },
            {
              role: "evaluator",
              model: "beta-pro",
              verdict: { label: "Exclude", reasoning: "Criterion 2 unmet: no workload definition." },
              exchange_ref: "screening:rec-9:evaluator:verdict",
            },
          ],
          flags: [],
          transcript: {
            record_id: "rec-9",
            rounds: [round(1), round(2), round(3)],
            resolution: { kind: "inclusion_default" },
          },
        },
        exchanges: { "screening:rec-9:assistant:verdict": null },
      },
    ],
  };
}

function settledEarly(): TranscriptPayload {
  return {
    record_id: "rec-5",
    transcripts: [
      {
        stage: "relevance",
        outcome: {
          record_id: "rec-5",
          stage: "relevance",
          label: "Exclude",
          mechanism: "dialogue_agreement",
          round: 1,
          decisions: [
            {
              role: "assistant",
              model: "alpha-large",
              verdict: { label: "Include", reasoning: "Tool paper, but the evaluation touches practitioners." },
              exchange_ref: "relevance:rec-5:assistant:verdict",
            },
            {
              role: "evaluator",
              model: "beta-pro",
              verdict: { label: "Exclude", reasoning: "Demo paper under 4 pages, criterion 6 excludes it." },
              exchange_ref: "relevance:rec-5:evaluator:verdict",
            },
          ],
          flags: [],
          transcript: {
            record_id: "rec-5",
            rounds: [
              {
                challenger: "evaluator",
                challenger_ref: "relevance:rec-5:evaluator:r1",
                challenger_message: "Page count is listed as 3 in the ACM record; criterion 6 is hard.",
                defender: "assistant",
                defender_ref: "relevance:rec-5:assistant:r1",
                defender_message: "Conceded; the venue page confirms 3 pages.",
                labels: ["Exclude", "Exclude"],
              },
            ],
            resolution: { kind: "agreement", label: "Exclude", round: 1 },
          },
        },
        exchanges: {},
      },
    ],
  };
}

function conflictServer(): FakeReviewServer {
  return new FakeReviewServer({
    conflicts: [
      { record_id: "rec-9", stage: "screening", label: "Include", mechanism: "inclusion_default", round: null, rounds: 3 },
      { record_id: "rec-5", stage: "relevance", label: "Exclude", mechanism: "dialogue_agreement", round: 1, rounds: 1 },
    ],
    transcripts: { "rec-9": deadlocked(), "rec-5": settledEarly() },
  });
}

async function mountInspector(server: FakeReviewServer): Promise<HTMLElement> {
  vi.stubGlobal("fetch", server.fetch);
  const root = document.createElement("div");
  document.body.append(root);
  await new ConflictInspectorView(new ReviewApi(), root).load();
  return root;
}

describe("ConflictInspectorView", () => {
  it("lists each conflict with its resolution summary", async () => {
    const root = await mountInspector(conflictServer());

    const rows = [...root.querySelectorAll("tbody tr")].map((tr) =>
      [...tr.querySelectorAll("td")].slice(0, 4).map((td) => td.textContent),
    );
    expect(rows).toEqual([
      ["rec-9", "screening", "3 rounds, no agreement", "Include"],
      ["rec-5", "relevance", "agreement in round 1", "Exclude"],
    ]);
  });

  it("renders the dialogue verbatim with per-round labels and a default-include badge", async () => {
    const server = conflictServer();
    const root = await mountInspector(server);

    root.querySelector<HTMLButtonElement>('[data-conflict="rec-9:screening"] button.inspect')!.click();
    await settle();

    expect(server.calls).toContain("GET /conflicts/rec-9/transcript?stage=screening");
    const section = root.querySelector('section.transcript[data-record="rec-9"]')!;

    expect(section.querySelector("header .badge")?.textContent).toBe(
      "no agreement after 3 rounds: Include by default",
    );

    const openers = [...section.querySelectorAll(".opener")];
    expect(openers[0].querySelector(".who")?.textContent).toBe("assistant (alpha-large): Include");
    expect(openers[0].querySelector("blockquote")?.textContent).toBe(
      "Meets criteria 1 and 3; the testbed is physical.",
    );
    expect(openers[1].querySelector("blockquote")?.textContent).toBe(
      "Criterion 2 unmet: no workload definition.",
    );

    const rounds = [...section.querySelectorAll(".round")];
    expect(rounds).toHaveLength(3);
    // reasoning text is untouched, newline included
    expect(rounds[0].querySelector(".challenger blockquote")?.textContent).toBe(CHALLENGE_1);
    expect(rounds[0].querySelector(".defender blockquote")?.textContent).toBe(DEFENSE_1);
    for (const round of rounds) {
      expect(round.querySelector(".post-labels")?.textContent).toBe(
        "after this round: assistant Include, evaluator Exclude",
      );
    }
  });

  it("shows an agreement badge with the settling round", async () => {
    const root = await mountInspector(conflictServer());

    root.querySelector<HTMLButtonElement>('[data-conflict="rec-5:relevance"] button.inspect')!.click();
    await settle();

    const section = root.querySelector('section.transcript[data-record="rec-5"]')!;
    expect(section.querySelector("header .badge")?.textContent).toBe("agreed on Exclude in round 1");
    expect(section.querySelectorAll(".round")).toHaveLength(1);
    expect(section.querySelector(".post-labels")?.textContent).toBe(
      "after this round: assistant Exclude, evaluator Exclude",
    );
  });

  it("surfaces a missing transcript instead of an empty panel", async () => {
    const server = new FakeReviewServer({
      conflicts: [
        { record_id: "rec-3", stage: "screening", label: "Include", mechanism: "inclusion_default", round: null, rounds: 3 },
      ],
      transcripts: {},
    });
    const root = await mountInspector(server);

    root.querySelector<HTMLButtonElement>("button.inspect")!.click();
    await settle();

    expect(root.querySelector(".transcript-panel .error")?.textContent).toContain(
      "no dialogue transcript for record rec-3",
    );
  });

  it("notes when no conflicts were recorded", async () => {
    const root = await mountInspector(new FakeReviewServer({ conflicts: [] }));
    expect(root.querySelector(".empty")?.textContent).toBe("no conflicts recorded");
  });
});
